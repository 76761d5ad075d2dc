#include "llmseg/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

std::vector<std::string> read_class_list(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    auto name = trim(line);
    if (!name.empty()) out.push_back(std::move(name));
  }
  if (out.empty()) fail(ErrorCode::Config, fmt::format("class list {} is empty", path.string()));
  return out;
}

std::vector<std::string> resolve_classes(const RunConfig& config) {
  std::vector<std::string> classes;
  if (!config.class_list.empty()) {
    auto all = read_class_list(config.class_list);
    classes.assign(all.begin() + 1, all.end());
  } else {
    classes = config.classes;
  }
  if (classes.empty()) fail(ErrorCode::Config, "no foreground classes configured");
  if (classes.size() >= kIgnoreLabel) fail(ErrorCode::Config, "at most 254 foreground classes are supported");
  return classes;
}

std::vector<SubclassSet> load_subclass_sets(std::span<const std::string> classes, const std::filesystem::path& dir) {
  std::vector<SubclassSet> sets;
  std::vector<std::string> problems;
  for (const auto& name : classes) {
    const auto path = dir / (slugify(name) + ".json");
    if (!std::filesystem::exists(path)) {
      problems.push_back(fmt::format("{}: missing {}", name, path.string()));
      continue;
    }
    try {
      sets.push_back(load_subclass_set(path));
    } catch (const Error& e) {
      problems.push_back(fmt::format("{}: {}", name, e.what()));
    }
  }
  if (!problems.empty()) {
    std::string joined;
    for (const auto& p : problems) joined += "\n  " + p;
    fail(ErrorCode::MissingInput, fmt::format("subclass sets unavailable for {} class(es):{}", problems.size(), joined));
  }
  return sets;
}

std::vector<PromptTemplate> resolve_templates(const RunConfig& config) {
  const auto registry = config.templates_file.empty() ? default_templates() : load_templates(config.templates_file);
  return select_templates(registry, config.templates);
}

namespace {

DescriptorMatrix descriptors_for(std::span<const std::string> names, std::span<const PromptTemplate> templates,
                                 FeatureSource& features, bool normalize) {
  std::vector<DescriptorMatrix> per_template;
  per_template.reserve(templates.size());
  for (const auto& t : templates) {
    std::vector<std::string> prompts;
    prompts.reserve(names.size());
    for (const auto& n : names) prompts.push_back(expand(t, n));
    auto blocks = features.text_tokens_batch(prompts);
    per_template.push_back(select_text_features(blocks, std::vector<std::string>(names.begin(), names.end())));
  }
  return average_over_templates(per_template, normalize);
}

}  // namespace

std::vector<ClassDescriptors> build_class_descriptors(std::span<const SubclassSet> sets,
                                                      std::span<const PromptTemplate> templates,
                                                      FeatureSource& features, const RunConfig& config) {
  std::vector<ClassDescriptors> out;
  const bool normalize = config.ensemble.normalize_features;
  for (const auto& set : sets) {
    if (set.subclasses.size() < config.n_subclasses) {
      fail(ErrorCode::Config, fmt::format("class '{}' has {} subclasses, run asks for {}", set.superclass,
                                          set.subclasses.size(), config.n_subclasses));
    }
    ClassDescriptors cd;
    cd.name = set.superclass;
    const std::vector<std::string> super_name = {set.superclass};
    cd.superclass = descriptors_for(super_name, templates, features, normalize).values.row(0).transpose();
    const std::vector<std::string> names(set.subclasses.begin(),
                                         set.subclasses.begin() + static_cast<std::ptrdiff_t>(config.n_subclasses));
    cd.subclasses = descriptors_for(names, templates, features, normalize);
    if (!out.empty() && static_cast<std::size_t>(cd.superclass.size()) != static_cast<std::size_t>(out.front().superclass.size())) {
      fail(ErrorCode::ShapeMismatch, "text features disagree on d across classes");
    }
    out.push_back(std::move(cd));
  }
  return out;
}

std::vector<Vector> class_patch_scores(const Matrix& image_feats, std::span<const ClassDescriptors> classes,
                                       const RunConfig& config) {
  std::vector<Vector> out;
  out.reserve(classes.size());
  for (const auto& cls : classes) {
    Vector sub, super;
    if (config.score_source != ScoreSource::SuperclassOnly) {
      sub = normalize_minmax(subclass_ensemble_map(image_feats, cls.subclasses, config.ensemble));
    }
    if (config.score_source != ScoreSource::SubclassOnly) {
      super = normalize_minmax(superclass_map(image_feats, cls.superclass, config.ensemble));
    }
    switch (config.score_source) {
      case ScoreSource::Mixed:
        out.push_back(mix_superclass(super, sub, config.ensemble.lambda_super));
        break;
      case ScoreSource::SuperclassOnly:
        out.push_back(std::move(super));
        break;
      case ScoreSource::SubclassOnly:
        out.push_back(std::move(sub));
        break;
    }
  }
  return out;
}

SegmentResult segment_image(const PatchImageFeatures& features, const RgbImage& image,
                            std::span<const ClassDescriptors> classes, const RunConfig& config) {
  features.validate();
  if (classes.empty()) fail(ErrorCode::InvalidArgument, "no classes to segment");
  if (static_cast<std::size_t>(classes.front().superclass.size()) != static_cast<std::size_t>(features.values.cols())) {
    fail(ErrorCode::ShapeMismatch, fmt::format("image features have d={}, text features d={}", features.values.cols(),
                                               classes.front().superclass.size()));
  }
  SegmentResult r;
  for (const auto& s : class_patch_scores(features.values, classes, config)) {
    Matrix plane = upsample_bilinear(reshape_to_grid(s, features.grid), config.resize);
    r.class_scores.push_back(plane.cwiseMax(0.0).cwiseMin(1.0));
  }
  if (config.use_crf) {
    const auto unary = to_unary(r.class_scores, config.background_spec());
    const auto small = resize_bilinear(image, config.resize);
    r.working_labels = mean_field(unary, small, config.crf, config.crf_threads).labels;
  } else {
    r.working_labels = assemble_labelmap(r.class_scores, config.tau);
  }
  std::vector<std::string> names = {"background"};
  for (const auto& c : classes) names.push_back(c.name);
  r.working_labels.class_names = names;
  r.labels = resize_labels_nearest(r.working_labels, image.size());
  return r;
}

std::unique_ptr<FeatureSource> make_feature_source(const RunConfig& config) {
  if (config.feature_mode == FeatureMode::Files) {
    if (config.features_dir.empty()) fail(ErrorCode::Config, "feature_mode 'files' needs backends.features_dir");
    return std::make_unique<FileFeatureSource>(config.features_dir);
  }
  auto url = config.embed_url.empty() ? env("LLMSEG_EMBED_URL").value_or("") : config.embed_url;
  if (url.empty()) fail(ErrorCode::Config, "feature_mode 'service' needs LLMSEG_EMBED_URL or backends.embed_url");
  return std::make_unique<RemoteFeatureSource>(url, config.cache_dir / "features");
}

}  // namespace llmseg

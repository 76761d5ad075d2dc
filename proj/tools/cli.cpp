#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "llmseg/bench.hpp"
#include "llmseg/config.hpp"
#include "llmseg/error.hpp"
#include "llmseg/image_io.hpp"
#include "llmseg/pipeline.hpp"
#include "llmseg/subclass_gen.hpp"
#include "llmseg/synthetic.hpp"
#include "llmseg/util.hpp"

namespace llmseg::cli {

namespace fs = std::filesystem;

namespace {

// Flags shared by every command that runs the pipeline. Each one overrides
// the config file only when given.
struct Overrides {
  std::string config;
  bool dry_run = false;
  double lambda = 0.0;
  std::string method, prompt, score_source, templates, resize, features, subclasses_dir;
  std::size_t n = 0;
  unsigned workers = 0;
  bool no_crf = false;
  std::map<std::string, CLI::Option*> given;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_flag("--dry-run", dry_run, "Print the resolved config and planned actions, then exit");
    given["lambda"] = app->add_option("--lambda", lambda, "Superclass weight in [0,1]");
    given["method"] = app->add_option("--method", method, "paper | average | cross_attention | max_similarity");
    given["prompt"] = app->add_option("--prompt", prompt, "p1 | p2");
    given["n"] = app->add_option("--n", n, "Subclasses per class");
    given["score_source"] = app->add_option("--score-source", score_source, "mixed | superclass_only | subclass_only");
    given["templates"] = app->add_option("--templates", templates, "Comma-separated template ids");
    given["resize"] = app->add_option("--resize", resize, "Working resolution HxW");
    given["features"] = app->add_option("--features", features, "Feature directory, or 'service'");
    given["subclasses_dir"] = app->add_option("--subclasses-dir", subclasses_dir, "Directory of {class}.json sets");
    given["workers"] = app->add_option("--workers", workers, "Images processed in parallel");
    given["no_crf"] = app->add_flag("--no-crf", no_crf, "Threshold the score maps instead of running the CRF");
  }

  bool has(const std::string& key) const { return given.at(key)->count() > 0; }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (has("lambda")) c.ensemble.lambda_super = lambda;
    if (has("method")) c.ensemble.method = parse_ensemble_method(method);
    if (has("prompt")) c.prompt_mode = parse_prompt_mode(prompt);
    if (has("n")) c.n_subclasses = n;
    if (has("score_source")) c.score_source = parse_score_source(score_source);
    if (has("templates")) {
      c.templates.clear();
      for (const auto& t : split(templates, ',')) c.templates.push_back(trim(t));
    }
    if (has("resize")) {
      const auto parts = split(to_lower(resize), 'x');
      if (parts.size() != 2) fail(ErrorCode::Config, fmt::format("--resize '{}' must be HxW", resize));
      try {
        c.resize = {std::stoul(parts[0]), std::stoul(parts[1])};
      } catch (const std::exception&) {
        fail(ErrorCode::Config, fmt::format("--resize '{}' must be HxW", resize));
      }
    }
    if (has("features")) {
      if (features == "service") {
        c.feature_mode = FeatureMode::Service;
      } else {
        c.feature_mode = FeatureMode::Files;
        c.features_dir = features;
      }
    }
    if (has("subclasses_dir")) c.subclasses_dir = subclasses_dir;
    if (has("workers")) c.workers = workers;
    if (no_crf) c.use_crf = false;
    c.validate();
    return c;
  }
};

std::vector<std::string> names_from(const std::string& arg) {
  if (fs::is_regular_file(arg)) {
    auto all = read_class_list(arg);
    return {all.begin() + 1, all.end()};
  }
  std::vector<std::string> out;
  for (const auto& s : split(arg, ',')) {
    auto t = trim(s);
    if (!t.empty()) out.push_back(std::move(t));
  }
  if (out.empty()) fail(ErrorCode::Config, "--classes is empty");
  return out;
}

// Every name must be known to the configured class list (when there is one)
// and have a subclass set; checked before any feature is touched.
std::vector<SubclassSet> sets_for(const std::vector<std::string>& classes, const RunConfig& c) {
  if (!c.class_list.empty() || !c.classes.empty()) {
    const auto known = resolve_classes(c);
    for (const auto& name : classes) {
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        fail(ErrorCode::Config, fmt::format("unknown class '{}'", name));
      }
    }
  }
  const auto& dir = c.subclass_dir_for(c.prompt_mode);
  if (dir.empty()) fail(ErrorCode::Config, "no subclass directory configured (--subclasses-dir)");
  try {
    return load_subclass_sets(classes, dir);
  } catch (const Error& e) {
    fail(ErrorCode::Config, fmt::format("unknown class or missing subclass set: {}", e.what()));
  }
}

std::string describe(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::Config ? kExitConfig : kExitPartial;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartial;
  }
}

int cmd_gen_subclasses(const Overrides& o, const std::vector<std::string>& class_args, const std::string& class_list,
                       const std::string& out_dir, const std::string& cache_dir, const std::string& fixtures,
                       const std::string& model, std::ostream& out, std::ostream& err) {
  RunConfig c = o.resolve();
  if (!fixtures.empty()) c.llm_fixture_dir = fixtures;
  if (!model.empty()) c.llm_model = model;
  if (!cache_dir.empty()) c.cache_dir = cache_dir;
  std::vector<std::string> classes = class_args;
  if (!class_list.empty()) {
    const auto all = read_class_list(class_list);
    classes.insert(classes.end(), all.begin() + 1, all.end());
  }
  if (classes.empty()) classes = resolve_classes(c);
  const fs::path dir = out_dir.empty() ? c.subclass_dir_for(c.prompt_mode) : fs::path(out_dir);
  if (dir.empty()) fail(ErrorCode::Config, "no output directory (--out)");

  SubclassGenerator gen(c.cache_dir / "subclasses", c.llm_endpoint());
  if (o.dry_run) {
    out << to_json(c).dump(2) << "\n";
    for (const auto& name : classes) {
      const bool cached = gen.load_cached(name, c.n_subclasses, c.prompt_mode).has_value();
      out << fmt::format("plan: {} subclasses of '{}' ({}, {}) -> {}\n", c.n_subclasses, name,
                         to_string(c.prompt_mode), cached ? "cached" : "needs endpoint",
                         (dir / (slugify(name) + ".json")).string());
    }
    return kExitOk;
  }
  std::vector<std::string> failures;
  for (const auto& name : classes) {
    try {
      const auto set = gen.generate(name, c.n_subclasses, c.prompt_mode);
      save_subclass_set(dir / (slugify(name) + ".json"), set);
      out << fmt::format("{}: {}\n", name, describe(set.subclasses));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Config) throw;
      failures.push_back(fmt::format("{}: {}", name, e.what()));
    }
  }
  for (const auto& f : failures) err << "failed " << f << "\n";
  return failures.empty() ? kExitOk : kExitPartial;
}

int cmd_segment(const Overrides& o, const std::vector<std::string>& image_args, const std::string& images_dir,
                const std::string& class_arg, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  RunConfig c = o.resolve();
  std::vector<fs::path> images(image_args.begin(), image_args.end());
  const fs::path dir = images_dir.empty() ? c.images_dir : fs::path(images_dir);
  if (images.empty() && !dir.empty()) {
    if (!fs::is_directory(dir)) fail(ErrorCode::Config, fmt::format("no images directory {}", dir.string()));
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") images.push_back(e.path());
    }
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) fail(ErrorCode::Config, "no input images (--image or --images-dir)");
  if (out_dir.empty()) fail(ErrorCode::Config, "--out-dir is required");
  const auto classes = class_arg.empty() ? resolve_classes(c) : names_from(class_arg);
  const auto sets = sets_for(classes, c);

  if (o.dry_run) {
    out << to_json(c).dump(2) << "\n";
    out << fmt::format("plan: segment {} image(s) into [{}] -> {}\n", images.size(), describe(classes), out_dir);
    return kExitOk;
  }

  auto features = make_feature_source(c);
  const auto templates = resolve_templates(c);
  const auto descriptors = build_class_descriptors(sets, templates, *features, c);
  fs::create_directories(out_dir);

  // Per image: pixel count per label, or the failure message.
  std::vector<std::vector<std::size_t>> histograms(images.size());
  std::vector<std::string> failures(images.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      const auto id = images[i].stem().string();
      try {
        const auto image = read_png_rgb(images[i]);
        const auto feats = features->image_features(images[i], id);
        const auto seg = segment_image(feats, image, descriptors, c);
        write_label_png(fs::path(out_dir) / (id + ".png"), seg.labels);
        write_png_rgb(fs::path(out_dir) / (id + "_overlay.png"), make_overlay(image, seg.labels));
        histograms[i].assign(classes.size() + 1, 0);
        for (auto l : seg.labels.labels) ++histograms[i][l];
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  const auto workers = std::min<std::size_t>(c.workers, images.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  std::string csv = "image,class,pixels\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto id = images[i].stem().string();
    if (!failures[i].empty()) {
      ++failed;
      err << fmt::format("failed {}: {}\n", id, failures[i]);
      continue;
    }
    for (std::size_t l = 0; l < histograms[i].size(); ++l) {
      csv += fmt::format("{},{},{}\n", id, l == 0 ? "background" : classes[l - 1], histograms[i][l]);
    }
  }
  atomic_write_file(fs::path(out_dir) / "summary.csv", csv);
  out << fmt::format("segmented {} of {} image(s) into {}\n", images.size() - failed, images.size(), out_dir);
  return failed == 0 ? kExitOk : kExitPartial;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& class_arg,
             const std::string& out_path, std::ostream& out) {
  std::vector<std::string> class_list = {"background"};
  const auto fg = names_from(class_arg);
  class_list.insert(class_list.end(), fg.begin(), fg.end());
  const auto report = evaluate_dirs(pred_dir, gt_dir, class_list);
  if (!out_path.empty()) atomic_write_file(out_path, report_csv(report));
  out << report_table(report);
  return kExitOk;
}

int cmd_bench(const Overrides& o, const std::string& run_dir, const std::string& pred_dir, std::ostream& out) {
  const RunConfig c = o.resolve();
  const auto dataset = DatasetSpec::from_config(c);
  if (o.dry_run) {
    out << to_json(c).dump(2) << "\n";
    out << fmt::format("plan: benchmark {} sample(s), run dir '{}'\n", dataset.sample_ids().size(), run_dir);
    return kExitOk;
  }
  auto features = make_feature_source(c);
  const auto report = run_benchmark(dataset, c, *features, {run_dir, pred_dir});
  out << report_table(report);
  return kExitOk;
}

int cmd_ablate(const Overrides& o, const std::string& sweep_arg, const std::string& out_path,
               const std::string& run_dir, std::ostream& out) {
  const RunConfig c = o.resolve();
  const auto sweep = parse_sweep(sweep_arg);
  const auto dataset = DatasetSpec::from_config(c);
  if (o.dry_run) {
    out << to_json(c).dump(2) << "\n";
    out << fmt::format("plan: {} sweep over [{}] on {} sample(s)\n", to_string(sweep.axis), describe(sweep.values),
                       dataset.sample_ids().size());
    return kExitOk;
  }
  auto features = make_feature_source(c);
  const auto rows = ablate(sweep, dataset, c, *features, run_dir);
  const auto csv = ablation_csv(sweep.axis, rows);
  if (out_path.empty()) {
    out << csv;
  } else {
    atomic_write_file(out_path, csv);
    out << fmt::format("wrote {} row(s) to {}\n", rows.size(), out_path);
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training-free semantic segmentation with LLM-generated subclass descriptors", "llmseg"};
  app.require_subcommand(1);
  std::function<int()> action;

  // gen-subclasses
  Overrides gen_o;
  std::vector<std::string> gen_classes;
  std::string gen_list, gen_out, gen_cache, gen_fixtures, gen_model;
  auto* gen = app.add_subcommand("gen-subclasses", "Ask the LLM for subclass names and store them as JSON");
  gen_o.add_to(gen);
  gen->add_option("--class", gen_classes, "Class name (repeatable)");
  gen->add_option("--class-list", gen_list, "Class list file, background first")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory for {class}.json");
  gen->add_option("--cache-dir", gen_cache, "Cache root (default from config)");
  gen->add_option("--fixtures", gen_fixtures, "Serve responses from a fixture directory instead of an endpoint");
  gen->add_option("--model", gen_model, "Model id sent to the endpoint");
  gen->callback([&] {
    action = [&] { return cmd_gen_subclasses(gen_o, gen_classes, gen_list, gen_out, gen_cache, gen_fixtures, gen_model, out, err); };
  });

  // segment
  Overrides seg_o;
  std::vector<std::string> seg_images;
  std::string seg_dir, seg_classes, seg_out;
  auto* seg = app.add_subcommand("segment", "Segment images and write label and overlay PNGs");
  seg_o.add_to(seg);
  seg->add_option("--image", seg_images, "Input PNG (repeatable)")->check(CLI::ExistingFile);
  seg->add_option("--images-dir", seg_dir, "Directory of input PNGs");
  seg->add_option("--classes", seg_classes, "Comma-separated names or a class list file");
  seg->add_option("--out-dir", seg_out, "Output directory");
  seg->callback([&] { action = [&] { return cmd_segment(seg_o, seg_images, seg_dir, seg_classes, seg_out, out, err); }; });

  // eval
  std::string ev_pred, ev_gt, ev_classes, ev_out;
  auto* ev = app.add_subcommand("eval", "Score prediction PNGs against ground-truth PNGs");
  ev->add_option("--pred-dir", ev_pred, "Predicted label PNGs")->required();
  ev->add_option("--gt-dir", ev_gt, "Ground-truth label PNGs")->required();
  ev->add_option("--classes", ev_classes, "Comma-separated foreground names or a class list file")->required();
  ev->add_option("--out", ev_out, "CSV report path");
  ev->callback([&] { action = [&] { return cmd_eval(ev_pred, ev_gt, ev_classes, ev_out, out); }; });

  // bench
  Overrides bench_o;
  std::string bench_run, bench_pred;
  auto* bench = app.add_subcommand("bench", "Segment and score the configured dataset split");
  bench_o.add_to(bench);
  bench->add_option("--run-dir", bench_run, "Directory for config, subclasses and report");
  bench->add_option("--predictions", bench_pred, "Directory for predicted label PNGs");
  bench->callback([&] { action = [&] { return cmd_bench(bench_o, bench_run, bench_pred, out); }; });

  // ablate
  Overrides abl_o;
  std::string abl_sweep, abl_out, abl_run;
  auto* abl = app.add_subcommand("ablate", "Benchmark once per value of a sweep axis");
  abl_o.add_to(abl);
  abl->add_option("--sweep", abl_sweep, "axis=values, e.g. lambda=0:1:0.2 or method=paper,average")->required();
  abl->add_option("--out", abl_out, "CSV path (default stdout)");
  abl->add_option("--run-dir", abl_run, "Per-value run directories");
  abl->callback([&] { action = [&] { return cmd_ablate(abl_o, abl_sweep, abl_out, abl_run, out); }; });

  // make-synthetic
  SyntheticSpec syn;
  std::string syn_out;
  auto* mk = app.add_subcommand("make-synthetic", "Write a planted-ground-truth dataset with features");
  mk->add_option("--out", syn_out, "Dataset root")->required();
  mk->add_option("--images", syn.images, "Number of images");
  mk->add_option("--distractors", syn.distractors, "Background-leaning subclasses per class");
  mk->add_option("--superclass-background", syn.superclass_background, "Background share in the superclass descriptor");
  mk->add_option("--seed", syn.seed, "Random seed");
  mk->callback([&] {
    action = [&] {
      const auto ds = write_synthetic_dataset(syn_out, syn);
      out << fmt::format("wrote {} image(s); config at {}\n", syn.images, (ds.root / "config.json").string());
      return kExitOk;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  return guarded(err, action);
}

}  // namespace llmseg::cli

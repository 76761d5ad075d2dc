#include "llmseg/config.hpp"

#include <set>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

using nlohmann::json;

std::string_view to_string(ScoreSource source) {
  switch (source) {
    case ScoreSource::Mixed: return "mixed";
    case ScoreSource::SuperclassOnly: return "superclass_only";
    case ScoreSource::SubclassOnly: return "subclass_only";
  }
  return "unknown";
}

ScoreSource parse_score_source(std::string_view text) {
  const auto t = to_lower(trim(text));
  for (auto s : {ScoreSource::Mixed, ScoreSource::SuperclassOnly, ScoreSource::SubclassOnly}) {
    if (t == to_string(s)) return s;
  }
  fail(ErrorCode::Config, fmt::format("unknown score_source '{}'", text));
}

void RunConfig::validate() const {
  try {
    ensemble.validate();
    crf.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
  if (n_subclasses < 1) fail(ErrorCode::Config, "n_subclasses must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorCode::Config, fmt::format("tau {} outside [0,1]", tau));
  if (resize.height == 0 || resize.width == 0) fail(ErrorCode::Config, "resize must be positive");
  if (templates.empty()) fail(ErrorCode::Config, "at least one template is required");
  if (workers == 0) fail(ErrorCode::Config, "workers must be >= 1");
}

const std::filesystem::path& RunConfig::subclass_dir_for(PromptMode mode) const {
  const auto& specific = mode == PromptMode::P1 ? subclasses_dir_p1 : subclasses_dir_p2;
  return specific.empty() ? subclasses_dir : specific;
}

LlmEndpointConfig RunConfig::llm_endpoint() const {
  LlmEndpointConfig e;
  e.model_id = llm_model;
  e.fixture_dir = llm_fixture_dir;
  e.apply_env();
  return e;
}

json to_json(const RunConfig& c) {
  return json{
      {"dataset",
       {{"images_dir", c.images_dir.string()},
        {"masks_dir", c.masks_dir.string()},
        {"split_file", c.split_file.string()},
        {"class_list", c.class_list.string()},
        {"classes", c.classes}}},
      {"subclasses",
       {{"prompt_mode", std::string(to_string(c.prompt_mode))},
        {"n", c.n_subclasses},
        {"dir", c.subclasses_dir.string()},
        {"dir_p1", c.subclasses_dir_p1.string()},
        {"dir_p2", c.subclasses_dir_p2.string()}}},
      {"templates", {{"ids", c.templates}, {"file", c.templates_file.string()}}},
      {"ensemble",
       {{"lambda_super", c.ensemble.lambda_super},
        {"method", std::string(to_string(c.ensemble.method))},
        {"normalize_features", c.ensemble.normalize_features},
        {"top_k_image", c.ensemble.top_k_image},
        {"score_source", std::string(to_string(c.score_source))}}},
      {"postprocess",
       {{"resize", {c.resize.height, c.resize.width}},
        {"tau", c.tau},
        {"background", c.background == BackgroundMode::Constant ? "constant" : "complement"},
        {"use_crf", c.use_crf}}},
      {"crf",
       {{"iterations", c.crf.iterations},
        {"gauss_sxy", c.crf.gauss_sxy},
        {"gauss_weight", c.crf.gauss_weight},
        {"bilat_sxy", c.crf.bilat_sxy},
        {"bilat_srgb", c.crf.bilat_srgb},
        {"bilat_weight", c.crf.bilat_weight}}},
      {"backends",
       {{"feature_mode", c.feature_mode == FeatureMode::Files ? "files" : "service"},
        {"features_dir", c.features_dir.string()},
        {"embed_url", c.embed_url},
        {"cache_dir", c.cache_dir.string()},
        {"llm_model", c.llm_model},
        {"llm_fixture_dir", c.llm_fixture_dir.string()}}},
      {"runtime", {{"workers", c.workers}, {"crf_threads", c.crf_threads}}},
  };
}

namespace {

// Visits the keys of one section, rejecting anything not in `allowed`.
const json* section(const json& root, const char* name, std::initializer_list<const char*> allowed) {
  if (!root.contains(name)) return nullptr;
  const json& s = root.at(name);
  if (!s.is_object()) fail(ErrorCode::Config, fmt::format("config section '{}' must be an object", name));
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : s.items()) {
    if (!ok.count(key)) fail(ErrorCode::Config, fmt::format("unknown config key '{}.{}'", name, key));
  }
  return &s;
}

template <typename T>
void read(const json* s, const char* key, T& out) {
  if (s != nullptr && s->contains(key)) out = s->at(key).get<T>();
}

void read_path(const json* s, const char* key, std::filesystem::path& out) {
  if (s != nullptr && s->contains(key)) out = s->at(key).get<std::string>();
}

}  // namespace

RunConfig run_config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) fail(ErrorCode::Config, "config must be a JSON object");
  static const std::set<std::string> kSections = {"dataset", "subclasses", "templates", "ensemble",
                                                  "postprocess", "crf", "backends", "runtime"};
  for (const auto& [key, _] : j.items()) {
    if (!kSections.count(key)) fail(ErrorCode::Config, fmt::format("unknown config section '{}'", key));
  }
  try {
    if (auto s = section(j, "dataset", {"images_dir", "masks_dir", "split_file", "class_list", "classes"})) {
      read_path(s, "images_dir", c.images_dir);
      read_path(s, "masks_dir", c.masks_dir);
      read_path(s, "split_file", c.split_file);
      read_path(s, "class_list", c.class_list);
      read(s, "classes", c.classes);
    }
    if (auto s = section(j, "subclasses", {"prompt_mode", "n", "dir", "dir_p1", "dir_p2"})) {
      if (s->contains("prompt_mode")) c.prompt_mode = parse_prompt_mode(s->at("prompt_mode").get<std::string>());
      read(s, "n", c.n_subclasses);
      read_path(s, "dir", c.subclasses_dir);
      read_path(s, "dir_p1", c.subclasses_dir_p1);
      read_path(s, "dir_p2", c.subclasses_dir_p2);
    }
    if (auto s = section(j, "templates", {"ids", "file"})) {
      read(s, "ids", c.templates);
      read_path(s, "file", c.templates_file);
    }
    if (auto s = section(j, "ensemble", {"lambda_super", "method", "normalize_features", "top_k_image", "score_source"})) {
      read(s, "lambda_super", c.ensemble.lambda_super);
      if (s->contains("method")) c.ensemble.method = parse_ensemble_method(s->at("method").get<std::string>());
      read(s, "normalize_features", c.ensemble.normalize_features);
      read(s, "top_k_image", c.ensemble.top_k_image);
      if (s->contains("score_source")) c.score_source = parse_score_source(s->at("score_source").get<std::string>());
    }
    if (auto s = section(j, "postprocess", {"resize", "tau", "background", "use_crf"})) {
      if (s->contains("resize")) {
        auto r = s->at("resize").get<std::vector<std::size_t>>();
        if (r.size() != 2) fail(ErrorCode::Config, "postprocess.resize must be [height, width]");
        c.resize = {r[0], r[1]};
      }
      read(s, "tau", c.tau);
      if (s->contains("background")) {
        auto b = s->at("background").get<std::string>();
        if (b == "constant") {
          c.background = BackgroundMode::Constant;
        } else if (b == "complement") {
          c.background = BackgroundMode::Complement;
        } else {
          fail(ErrorCode::Config, fmt::format("unknown background mode '{}'", b));
        }
      }
      read(s, "use_crf", c.use_crf);
    }
    if (auto s = section(j, "crf", {"iterations", "gauss_sxy", "gauss_weight", "bilat_sxy", "bilat_srgb", "bilat_weight"})) {
      read(s, "iterations", c.crf.iterations);
      read(s, "gauss_sxy", c.crf.gauss_sxy);
      read(s, "gauss_weight", c.crf.gauss_weight);
      read(s, "bilat_sxy", c.crf.bilat_sxy);
      read(s, "bilat_srgb", c.crf.bilat_srgb);
      read(s, "bilat_weight", c.crf.bilat_weight);
    }
    if (auto s = section(j, "backends", {"feature_mode", "features_dir", "embed_url", "cache_dir", "llm_model", "llm_fixture_dir"})) {
      if (s->contains("feature_mode")) {
        auto m = s->at("feature_mode").get<std::string>();
        if (m == "files") {
          c.feature_mode = FeatureMode::Files;
        } else if (m == "service") {
          c.feature_mode = FeatureMode::Service;
        } else {
          fail(ErrorCode::Config, fmt::format("unknown feature_mode '{}'", m));
        }
      }
      read_path(s, "features_dir", c.features_dir);
      read(s, "embed_url", c.embed_url);
      read_path(s, "cache_dir", c.cache_dir);
      read(s, "llm_model", c.llm_model);
      read_path(s, "llm_fixture_dir", c.llm_fixture_dir);
    }
    if (auto s = section(j, "runtime", {"workers", "crf_threads"})) {
      read(s, "workers", c.workers);
      read(s, "crf_threads", c.crf_threads);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, fmt::format("config value has the wrong type: {}", e.what()));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    fail(ErrorCode::Config, e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, fmt::format("{}: {}", path.string(), e.what()));
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("runtime");
  return sha256_hex(j.dump());
}

}  // namespace llmseg

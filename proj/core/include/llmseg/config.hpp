#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "llmseg/crf.hpp"
#include "llmseg/ensemble.hpp"
#include "llmseg/llm_client.hpp"
#include "llmseg/subclass_gen.hpp"
#include "llmseg/types.hpp"

namespace llmseg {

/// Which maps feed the final per-class score.
enum class ScoreSource {
  Mixed,           // lambda * superclass + (1 - lambda) * subclass ensemble
  SuperclassOnly,  // superclass descriptor alone
  SubclassOnly,    // subclass ensemble alone
};

std::string_view to_string(ScoreSource source);
ScoreSource parse_score_source(std::string_view text);

enum class FeatureMode { Files, Service };

/// Everything a segmentation or benchmark run depends on. Serialized as a
/// flat-ish JSON document; unknown keys are rejected.
struct RunConfig {
  // dataset
  std::filesystem::path images_dir;
  std::filesystem::path masks_dir;
  std::filesystem::path split_file;
  std::filesystem::path class_list;  // background first, one name per line
  std::vector<std::string> classes;  // foreground classes, used when class_list is empty

  // subclasses
  PromptMode prompt_mode = PromptMode::P2;
  std::size_t n_subclasses = 10;
  std::filesystem::path subclasses_dir;     // {dir}/{slug}.json
  std::filesystem::path subclasses_dir_p1;  // mode-specific overrides
  std::filesystem::path subclasses_dir_p2;

  // text side
  std::vector<std::string> templates = {"T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9", "T10"};
  std::filesystem::path templates_file;

  // fusion
  EnsembleConfig ensemble;
  ScoreSource score_source = ScoreSource::Mixed;

  // post-processing
  ImageSize resize{288, 288};
  double tau = 0.5;
  BackgroundMode background = BackgroundMode::Constant;
  bool use_crf = true;
  CrfParams crf;

  // backends
  FeatureMode feature_mode = FeatureMode::Files;
  std::filesystem::path features_dir;
  std::string embed_url;
  std::filesystem::path cache_dir = ".llmseg_cache";
  std::string llm_model = "gpt-3.5-turbo-instruct";
  std::filesystem::path llm_fixture_dir;

  unsigned workers = 1;
  unsigned crf_threads = 0;

  void validate() const;
  const std::filesystem::path& subclass_dir_for(PromptMode mode) const;
  BackgroundSpec background_spec() const { return {background, tau}; }
  /// Endpoint settings, with URL and key taken from the environment.
  LlmEndpointConfig llm_endpoint() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Starts from defaults and overlays the keys present in `j`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// SHA-256 of the canonical (key-sorted) JSON form; independent of the key
/// order in the source file.
std::string config_hash(const RunConfig& config);

}  // namespace llmseg

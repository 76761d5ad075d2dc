#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "llmseg/config.hpp"
#include "llmseg/features.hpp"
#include "llmseg/mask_ops.hpp"

namespace llmseg {

/// VOC-style dataset: {images_dir}/{id}.png, {masks_dir}/{id}.png (8-bit
/// class indices), class list with background first.
struct DatasetSpec {
  std::filesystem::path images_dir;
  std::filesystem::path masks_dir;
  std::filesystem::path split_file;  // newline-separated ids; empty = every PNG in images_dir
  std::vector<std::string> class_list;
  std::uint8_t ignore_index = kIgnoreLabel;

  static DatasetSpec from_config(const RunConfig& config);

  std::vector<std::string> sample_ids() const;
  std::filesystem::path image_path(const std::string& id) const { return images_dir / (id + ".png"); }
  std::filesystem::path mask_path(const std::string& id) const { return masks_dir / (id + ".png"); }
};

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  /// tp / (tp + fp + fn); empty when the class never occurs in pred or gt.
  std::optional<double> iou() const;
  bool operator==(const ClassCounts&) const = default;
};

/// Per-class pixel counts. Merging is plain summation, so the order in which
/// samples are accumulated does not matter.
class Confusion {
 public:
  explicit Confusion(std::size_t num_classes, std::uint8_t ignore_index = kIgnoreLabel);

  void accumulate(const LabelMap& pred, const LabelMap& gt);
  void merge(const Confusion& other);

  const std::vector<ClassCounts>& counts() const { return counts_; }
  std::uint64_t evaluated_pixels() const { return evaluated_; }

 private:
  std::vector<ClassCounts> counts_;
  std::uint8_t ignore_;
  std::uint64_t evaluated_ = 0;
};

struct SegReport {
  std::vector<std::string> class_names;
  std::vector<ClassCounts> counts;
  std::vector<std::optional<double>> iou;
  double miou = 0.0;             // over every evaluated class, background included
  double miou_foreground = 0.0;  // same, background excluded
  bool empty = false;            // no pixel was evaluated
  std::size_t images = 0;
  std::string config_hash;
};

SegReport make_report(const Confusion& confusion, std::vector<std::string> class_names, std::string config_hash = {});

/// class,tp,fp,fn,iou rows followed by a final miou row.
std::string report_csv(const SegReport& report);
std::string report_table(const SegReport& report);
nlohmann::json report_json(const SegReport& report);

struct BenchmarkOutputs {
  std::filesystem::path run_dir;          // config.json, subclasses.json, report.{csv,txt,json}
  std::filesystem::path predictions_dir;  // {id}.png label maps
};

/// Segments and scores every sample of the split. Missing inputs are
/// collected and reported together rather than skipped.
SegReport run_benchmark(const DatasetSpec& dataset, const RunConfig& config, FeatureSource& features,
                        const BenchmarkOutputs& outputs = {});

/// Scores existing prediction PNGs against ground truth, matched by file name.
SegReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        std::vector<std::string> class_list, std::uint8_t ignore_index = kIgnoreLabel);

enum class SweepAxis { Lambda, NSubclasses, Template, EnsembleMethod, PromptMode };

std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view text);

struct Sweep {
  SweepAxis axis;
  std::vector<std::string> values;
};

/// "axis=a,b,c" or, for numeric axes, "axis=start:stop:step" (inclusive).
Sweep parse_sweep(std::string_view text);

/// Copy of `config` with one sweep value applied.
RunConfig apply_sweep_value(const RunConfig& config, SweepAxis axis, const std::string& value);

struct AblationRow {
  std::string value;
  SegReport report;
};

/// One benchmark per sweep value over the same dataset and feature source.
/// With a run_dir, each value gets its own {axis}_{value} subdirectory.
std::vector<AblationRow> ablate(const Sweep& sweep, const DatasetSpec& dataset, const RunConfig& config,
                                FeatureSource& features, const std::filesystem::path& run_dir = {});

/// axis,value,miou,miou_foreground,config_hash,note
std::string ablation_csv(SweepAxis axis, const std::vector<AblationRow>& rows);

}  // namespace llmseg

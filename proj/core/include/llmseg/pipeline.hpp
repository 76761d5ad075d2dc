#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "llmseg/config.hpp"
#include "llmseg/crf.hpp"
#include "llmseg/ensemble.hpp"
#include "llmseg/features.hpp"
#include "llmseg/image_io.hpp"
#include "llmseg/mask_ops.hpp"
#include "llmseg/subclass_gen.hpp"
#include "llmseg/templates.hpp"

namespace llmseg {

/// Text-side state for one target class, computed once per run.
struct ClassDescriptors {
  std::string name;
  Vector superclass;            // template-averaged LoDA descriptor of the class name
  DescriptorMatrix subclasses;  // [n x d] template-averaged subclass descriptors
};

/// Foreground class names of a run: class_list minus its first (background)
/// entry, or `classes` when no list file is set.
std::vector<std::string> resolve_classes(const RunConfig& config);

std::vector<std::string> read_class_list(const std::filesystem::path& path);

/// Loads {dir}/{slug}.json for every class. Missing or invalid files are
/// reported together in one MissingInput error.
std::vector<SubclassSet> load_subclass_sets(std::span<const std::string> classes, const std::filesystem::path& dir);

std::vector<PromptTemplate> resolve_templates(const RunConfig& config);

/// Template expansion, LoDA selection and template averaging for all classes.
std::vector<ClassDescriptors> build_class_descriptors(std::span<const SubclassSet> sets,
                                                      std::span<const PromptTemplate> templates,
                                                      FeatureSource& features, const RunConfig& config);

/// Patch-level per-class scores in [0,1] (one vector of m_i per class).
std::vector<Vector> class_patch_scores(const Matrix& image_feats, std::span<const ClassDescriptors> classes,
                                       const RunConfig& config);

struct SegmentResult {
  std::vector<Matrix> class_scores;  // working resolution, one per class
  LabelMap working_labels;           // working resolution
  LabelMap labels;                   // original image size
};

/// Scores -> grid -> upsample -> (CRF | threshold) -> resize to the image.
SegmentResult segment_image(const PatchImageFeatures& features, const RgbImage& image,
                            std::span<const ClassDescriptors> classes, const RunConfig& config);

std::unique_ptr<FeatureSource> make_feature_source(const RunConfig& config);

}  // namespace llmseg

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmseg/types.hpp"

namespace llmseg {

enum class EnsembleMethod { Paper, Average, CrossAttention, MaxSimilarity };

std::string_view to_string(EnsembleMethod method);
EnsembleMethod parse_ensemble_method(std::string_view text);

/// One d-dimensional feature per descriptor (class or subclass name).
struct DescriptorMatrix {
  Matrix values;  // [n x d]
  std::vector<std::string> names;
  bool normalized = false;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
};

/// Intermediate values of descriptor fusion, kept for inspection and tests.
struct FusionTrace {
  Vector i_pool;    // [d]     mean of the top-k responses per channel
  Matrix relation;  // [n x d] descriptors scaled channel-wise by i_pool
  Vector row_max;   // [n]
  Vector weights;   // [n]     softmax(row_max)
  Vector fused;     // [d]     weights^T * descriptors
};

struct EnsembleConfig {
  double lambda_super = 0.2;
  EnsembleMethod method = EnsembleMethod::Paper;
  bool normalize_features = true;
  std::size_t top_k_image = 5;

  void validate() const;
};

/// Numerically stable softmax.
Vector softmax(const Vector& logits);

/// Row-wise L2 normalization. Zero rows stay zero when allow_zero, otherwise
/// they raise DegenerateDescriptor.
Matrix l2_normalize_rows(const Matrix& m, bool allow_zero);

/// Superclass-only similarity: S_k = mean_j <token_j, patch_k>.
Vector baseline_similarity(const Matrix& image_feats, const Matrix& text_tokens);

/// Per-channel maximum over the token axis of one [m_t x d] block.
Vector select_token_max(const Matrix& tokens);

/// Applies select_token_max to every descriptor block.
DescriptorMatrix select_text_features(std::span<const Matrix> text_tokens, std::vector<std::string> names = {});

/// A[i,k] = <descriptor_i, patch_k>, optionally on row-normalized inputs.
Matrix attention_map(const Matrix& image_feats, const DescriptorMatrix& descriptors, bool normalize = false);

/// Per channel, the k largest patch responses in descending order: [k x d].
Matrix select_image_features(const Matrix& image_feats, std::size_t k);

FusionTrace fuse_descriptors(const Matrix& image_feats, const DescriptorMatrix& descriptors, std::size_t k);

/// A'[k] = <fused, patch_k>.
Vector ensemble_attention(const Matrix& image_feats, const Vector& fused);

/// lambda * a_super + (1 - lambda) * a_sub; both maps must already be in [0,1].
Vector mix_superclass(const Vector& a_super, const Vector& a_sub, double lambda);

/// Elementwise mean of per-template descriptor sets; rows are re-normalized
/// when `normalize` is set.
DescriptorMatrix average_over_templates(std::span<const DescriptorMatrix> sets, bool normalize);

/// The comparison ensembles. `cross_attention` is a stand-in (softmax over
/// <descriptor_i, i_pool> applied to the maps); no reference definition exists.
Vector alt_ensemble(EnsembleMethod method, const Matrix& image_feats, const DescriptorMatrix& descriptors,
                    const Matrix& per_subclass_maps, std::size_t k);

/// Subclass map for any method, honoring config.normalize_features.
Vector subclass_ensemble_map(const Matrix& image_feats, const DescriptorMatrix& descriptors,
                             const EnsembleConfig& config);

/// Superclass map: attention with a single descriptor row.
Vector superclass_map(const Matrix& image_feats, const Vector& descriptor, const EnsembleConfig& config);

}  // namespace llmseg

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "llmseg/image_io.hpp"
#include "llmseg/mask_ops.hpp"
#include "llmseg/types.hpp"

namespace llmseg {

/// Pairwise kernel settings for dense-CRF mean-field inference. Defaults are
/// the common public dense-CRF values (appearance 80/13 w=10, smoothness 3 w=3).
struct CrfParams {
  int iterations = 3;
  double gauss_sxy = 3.0;
  double gauss_weight = 3.0;
  double bilat_sxy = 80.0;
  double bilat_srgb = 13.0;
  double bilat_weight = 10.0;

  void validate() const;
};

/// Kernels are truncated to a square window of this half-width: ceil(3 * sxy).
int kernel_radius(double sxy);

/// Per-pixel label distributions, one H x W plane per label.
struct UnaryField {
  std::vector<Matrix> probs;

  std::size_t labels() const { return probs.size(); }
  ImageSize size() const;
  void validate() const;
};

enum class BackgroundMode {
  Constant,    // background score is a fixed value (default: the threshold)
  Complement,  // background score is 1 - max foreground score
};

struct BackgroundSpec {
  BackgroundMode mode = BackgroundMode::Constant;
  double value = 0.5;
};

/// Prepends a background channel to L foreground score planes in [0,1] and
/// applies a per-pixel softmax, giving L+1 labels with background at 0.
UnaryField to_unary(std::span<const Matrix> score_maps, BackgroundSpec background = {});

struct CrfResult {
  std::vector<Matrix> marginals;
  LabelMap labels;
};

/// Called after every update with the 1-based iteration number.
using CrfObserver = std::function<void(int, const std::vector<Matrix>&)>;

/// Mean-field inference with Potts compatibility and Gaussian + bilateral
/// kernels (self-pairs excluded). Rows are split across `threads` workers
/// (0 = hardware concurrency); results do not depend on the thread count.
CrfResult mean_field(const UnaryField& unary, const RgbImage& image, const CrfParams& params,
                     unsigned threads = 0, const CrfObserver& observer = {});

/// Argmax per pixel, ties to the lower label.
LabelMap argmax_labels(const std::vector<Matrix>& planes);

}  // namespace llmseg

#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace llmseg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Patch grid of a vision backbone, row-major patch order.
struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels() const { return height * width; }
  bool operator==(const ImageSize&) const = default;
};

}  // namespace llmseg

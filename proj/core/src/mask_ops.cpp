#include "llmseg/mask_ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "llmseg/error.hpp"

namespace llmseg {

Matrix reshape_to_grid(const Vector& scores, GridShape grid) {
  if (grid.size() != static_cast<std::size_t>(scores.size()) || grid.rows == 0) {
    fail(ErrorCode::ShapeMismatch, fmt::format("cannot reshape {} scores to a {}x{} grid", scores.size(), grid.rows, grid.cols));
  }
  Matrix out(static_cast<Eigen::Index>(grid.rows), static_cast<Eigen::Index>(grid.cols));
  std::copy(scores.data(), scores.data() + scores.size(), out.data());
  return out;
}

Vector flatten(const Matrix& grid) {
  Vector out(grid.size());
  std::copy(grid.data(), grid.data() + grid.size(), out.data());
  return out;
}

namespace {

struct Tap {
  Eigen::Index lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, last);
    const double lo = std::floor(src);
    taps[i].lo = static_cast<Eigen::Index>(lo);
    taps[i].hi = std::min<Eigen::Index>(taps[i].lo + 1, static_cast<Eigen::Index>(in - 1));
    taps[i].frac = src - lo;
  }
  return taps;
}

}  // namespace

Matrix upsample_bilinear(const Matrix& grid, ImageSize out) {
  if (out.height == 0 || out.width == 0) fail(ErrorCode::InvalidArgument, "upsample target size must be positive");
  if (grid.rows() == 0 || grid.cols() == 0) fail(ErrorCode::InvalidArgument, "cannot upsample an empty grid");
  const auto ty = bilinear_taps(static_cast<std::size_t>(grid.rows()), out.height);
  const auto tx = bilinear_taps(static_cast<std::size_t>(grid.cols()), out.width);
  Matrix result(static_cast<Eigen::Index>(out.height), static_cast<Eigen::Index>(out.width));
  for (std::size_t y = 0; y < out.height; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < out.width; ++x) {
      const auto& b = tx[x];
      const double top = grid(a.lo, b.lo) + b.frac * (grid(a.lo, b.hi) - grid(a.lo, b.lo));
      const double bottom = grid(a.hi, b.lo) + b.frac * (grid(a.hi, b.hi) - grid(a.hi, b.lo));
      result(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = top + a.frac * (bottom - top);
    }
  }
  return result;
}

namespace {

template <typename Dense>
Dense minmax_impl(const Dense& m) {
  if (m.size() == 0) return m;
  if (!m.allFinite()) fail(ErrorCode::NonFinite, "cannot normalize a map with non-finite values");
  const double lo = m.minCoeff();
  const double hi = m.maxCoeff();
  if (!(hi > lo)) return Dense::Constant(m.rows(), m.cols(), 0.5);
  return ((m.array() - lo) / (hi - lo)).matrix();
}

}  // namespace

Vector normalize_minmax(const Vector& v) { return minmax_impl(v); }
Matrix normalize_minmax(const Matrix& m) { return minmax_impl(m); }

LabelMap assemble_labelmap(std::span<const Matrix> per_class_scores, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorCode::InvalidArgument, fmt::format("threshold {} outside [0,1]", tau));
  if (per_class_scores.empty()) fail(ErrorCode::InvalidArgument, "no class score maps");
  if (per_class_scores.size() >= kIgnoreLabel) fail(ErrorCode::InvalidArgument, "too many classes for 8-bit labels");
  const auto h = per_class_scores.front().rows();
  const auto w = per_class_scores.front().cols();
  for (const auto& s : per_class_scores) {
    if (s.rows() != h || s.cols() != w) fail(ErrorCode::ShapeMismatch, "class score maps differ in size");
  }
  LabelMap out(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      std::size_t best = 0;
      double best_score = per_class_scores[0](y, x);
      for (std::size_t c = 1; c < per_class_scores.size(); ++c) {
        if (per_class_scores[c](y, x) > best_score) {
          best_score = per_class_scores[c](y, x);
          best = c;
        }
      }
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
          best_score >= tau ? static_cast<std::uint8_t>(best + 1) : std::uint8_t{0};
    }
  }
  return out;
}

LabelMap resize_labels_nearest(const LabelMap& labels, ImageSize out) {
  if (out.height == 0 || out.width == 0 || labels.height == 0 || labels.width == 0) {
    fail(ErrorCode::InvalidArgument, "label resize needs positive sizes");
  }
  LabelMap result = labels;
  result.height = out.height;
  result.width = out.width;
  result.labels.assign(out.pixels(), 0);
  auto source = [](std::size_t i, std::size_t in, std::size_t outn) {
    // floor((i + 0.5) * in / out) in exact integer arithmetic
    return std::min(in - 1, ((2 * i + 1) * in) / (2 * outn));
  };
  for (std::size_t y = 0; y < out.height; ++y) {
    const auto sy = source(y, labels.height, out.height);
    for (std::size_t x = 0; x < out.width; ++x) {
      result.at(y, x) = labels.at(sy, source(x, labels.width, out.width));
    }
  }
  return result;
}

}  // namespace llmseg

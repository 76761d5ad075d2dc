#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llmseg/types.hpp"

namespace llmseg {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Per-pixel class indices. 0 is background, foreground classes are 1..L.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;  // row-major
  std::vector<std::string> class_names;
  std::uint8_t ignore_index = kIgnoreLabel;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  ImageSize size() const { return {height, width}; }

  bool operator==(const LabelMap&) const = default;
};

Matrix reshape_to_grid(const Vector& scores, GridShape grid);
Vector flatten(const Matrix& grid);

/// Half-pixel-center bilinear resampling with edge clamping.
Matrix upsample_bilinear(const Matrix& grid, ImageSize out);

/// (x - min) / (max - min); a constant input maps to 0.5 everywhere.
Vector normalize_minmax(const Vector& v);
Matrix normalize_minmax(const Matrix& m);

/// Argmax over classes where the winning score reaches tau, else background.
/// Ties go to the lower class index.
LabelMap assemble_labelmap(std::span<const Matrix> per_class_scores, double tau);

LabelMap resize_labels_nearest(const LabelMap& labels, ImageSize out);

}  // namespace llmseg

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "llmseg/mask_ops.hpp"
#include "llmseg/types.hpp"

namespace llmseg {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // 3 * height * width

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(3 * h * w, 0) {}

  ImageSize size() const { return {height, width}; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const { return &pixels[3 * (y * width + x)]; }
  std::uint8_t* at(std::size_t y, std::size_t x) { return &pixels[3 * (y * width + x)]; }
};

/// Reads any 8/16-bit PNG and converts it to RGB (alpha dropped, gray expanded).
RgbImage read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

/// Reads dimensions from the PNG header only.
ImageSize read_png_size(const std::filesystem::path& path);

/// Single-channel 8-bit PNG holding class indices. Palette PNGs are read by
/// index, not color.
LabelMap read_label_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

/// Standard VOC color for a class index (255 maps to a light gray).
std::array<std::uint8_t, 3> palette_color(std::uint8_t label);

/// Image blended 50/50 with the palette color of each label.
RgbImage make_overlay(const RgbImage& image, const LabelMap& labels);

RgbImage resize_bilinear(const RgbImage& image, ImageSize out);

}  // namespace llmseg

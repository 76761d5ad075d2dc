#include "llmseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

namespace {

std::vector<std::uint8_t> read_simplified(const std::filesystem::path& path, png_uint_32 format,
                                          std::size_t& height, std::size_t& width) {
  const auto bytes = read_file(path);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    fail(ErrorCode::Format, fmt::format("{}: {}", path.string(), image.message));
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
    fail(ErrorCode::Format, fmt::format("{}: {}", path.string(), image.message));
  }
  height = image.height;
  width = image.width;
  return buffer;
}

void write_simplified(const std::filesystem::path& path, png_uint_32 format, std::size_t height, std::size_t width,
                      const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (png_image_write_to_memory(&image, nullptr, &size, 0, data, 0, nullptr) == 0) {
    fail(ErrorCode::Io, fmt::format("{}: {}", path.string(), image.message));
  }
  std::string buffer(size, '\0');
  if (png_image_write_to_memory(&image, buffer.data(), &size, 0, data, 0, nullptr) == 0) {
    fail(ErrorCode::Io, fmt::format("{}: {}", path.string(), image.message));
  }
  buffer.resize(size);
  atomic_write_file(path, buffer);
}

struct MemoryReader {
  const std::string* bytes;
  std::size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
  auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (reader->offset + length > reader->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(out, reader->bytes->data() + reader->offset, length);
  reader->offset += length;
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RgbImage out;
  out.pixels = read_simplified(path, PNG_FORMAT_RGB, out.height, out.width);
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  write_simplified(path, PNG_FORMAT_RGB, image.height, image.width, image.pixels.data());
}

ImageSize read_png_size(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    fail(ErrorCode::Format, fmt::format("{}: {}", path.string(), image.message));
  }
  ImageSize size{image.height, image.width};
  png_image_free(&image);
  return size;
}

LabelMap read_label_png(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) fail(ErrorCode::Io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::Io, "png_create_info_struct failed");
  }

  LabelMap out;
  std::string problem;
  MemoryReader reader{&bytes};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Format, fmt::format("{}: invalid label PNG", path.string()));
  }
  png_set_read_fn(png, &reader, read_from_memory);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE || color_type == PNG_COLOR_TYPE_GRAY) {
    if (bit_depth < 8) png_set_packing(png);
    if (bit_depth == 16) problem = "16-bit label PNGs are not supported";
  } else {
    problem = "label PNG must be single-channel gray or palette";
  }
  if (problem.empty()) {
    png_read_update_info(png, info);
    out.height = height;
    out.width = width;
    out.labels.resize(static_cast<std::size_t>(height) * width);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = out.labels.data() + static_cast<std::size_t>(y) * width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!problem.empty()) fail(ErrorCode::Format, fmt::format("{}: {}", path.string(), problem));
  return out;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  write_simplified(path, PNG_FORMAT_GRAY, labels.height, labels.width, labels.labels.data());
}

std::array<std::uint8_t, 3> palette_color(std::uint8_t label) {
  if (label == kIgnoreLabel) return {224, 224, 192};
  std::array<std::uint8_t, 3> c{0, 0, 0};
  unsigned v = label;
  for (int shift = 7; v != 0; --shift, v >>= 3) {
    for (int ch = 0; ch < 3; ++ch) c[ch] |= static_cast<std::uint8_t>(((v >> ch) & 1U) << shift);
  }
  return c;
}

RgbImage make_overlay(const RgbImage& image, const LabelMap& labels) {
  if (image.height != labels.height || image.width != labels.width) {
    fail(ErrorCode::ShapeMismatch, "overlay image and labels differ in size");
  }
  RgbImage out = image;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const auto color = palette_color(labels.at(y, x));
      auto* px = out.at(y, x);
      for (int ch = 0; ch < 3; ++ch) px[ch] = static_cast<std::uint8_t>((px[ch] + color[ch] + 1) / 2);
    }
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, ImageSize out) {
  if (out.height == image.height && out.width == image.width) return image;
  RgbImage result(out.height, out.width);
  for (int ch = 0; ch < 3; ++ch) {
    Matrix plane(static_cast<Eigen::Index>(image.height), static_cast<Eigen::Index>(image.width));
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        plane(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = image.at(y, x)[ch];
      }
    }
    const Matrix scaled = upsample_bilinear(plane, out);
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        const double v = std::round(scaled(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)));
        result.at(y, x)[ch] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return result;
}

}  // namespace llmseg

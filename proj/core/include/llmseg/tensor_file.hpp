#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace llmseg {

/// Row-major f32 tensor plus free-form metadata, as stored on disk.
///
/// File layout (all integers little-endian):
///   "LSEG" | u32 version | u32 header_len | header JSON | f32le payload
/// The header is {"dtype":"f32le","shape":[...],"meta":{...}}.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> values;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t element_count() const;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;
inline constexpr std::size_t kMaxTensorHeaderBytes = 64 * 1024;
inline constexpr std::size_t kMaxTensorRank = 4;

std::string encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::string_view bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace llmseg

#include "llmseg/tensor_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'E', 'G'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > kMaxTensorRank) {
    fail(ErrorCode::Format, fmt::format("tensor rank {} outside 1..{}", shape.size(), kMaxTensorRank));
  }
  for (auto d : shape) {
    if (d == 0) fail(ErrorCode::Format, "tensor dimensions must be positive");
  }
}

}  // namespace

std::size_t Tensor::element_count() const { return product(shape); }

std::string encode_tensor(const Tensor& tensor) {
  check_shape(tensor.shape);
  if (tensor.values.size() != tensor.element_count()) {
    fail(ErrorCode::ShapeMismatch,
         fmt::format("tensor holds {} values but shape implies {}", tensor.values.size(), tensor.element_count()));
  }
  for (float v : tensor.values) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "refusing to write non-finite tensor values");
  }
  nlohmann::json header = {{"dtype", "f32le"}, {"shape", tensor.shape}, {"meta", tensor.meta}};
  const std::string header_text = header.dump();
  if (header_text.size() > kMaxTensorHeaderBytes) {
    fail(ErrorCode::Format, fmt::format("tensor header is {} bytes, limit {}", header_text.size(), kMaxTensorHeaderBytes));
  }

  std::string out;
  out.reserve(12 + header_text.size() + 4 * tensor.values.size());
  out.append(kMagic, 4);
  put_u32(out, kTensorFileVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.append(header_text);
  for (float v : tensor.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::Format, "bad tensor magic");
  const auto version = get_u32(bytes, 4);
  if (version != kTensorFileVersion) {
    fail(ErrorCode::Format, fmt::format("tensor file version {} unsupported (expected {})", version, kTensorFileVersion));
  }
  const auto header_len = get_u32(bytes, 8);
  if (header_len > kMaxTensorHeaderBytes || 12 + std::size_t{header_len} > bytes.size()) {
    fail(ErrorCode::Format, "tensor header length exceeds file");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, fmt::format("tensor header is not JSON: {}", e.what()));
  }

  Tensor t;
  try {
    const auto dtype = header.at("dtype").get<std::string>();
    if (dtype != "f32le") fail(ErrorCode::UnsupportedDtype, fmt::format("dtype '{}' unsupported in v1", dtype));
    t.shape = header.at("shape").get<std::vector<std::size_t>>();
    if (header.contains("meta")) t.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, fmt::format("tensor header malformed: {}", e.what()));
  }
  check_shape(t.shape);

  const std::size_t count = t.element_count();
  const std::size_t payload = bytes.size() - 12 - header_len;
  if (payload != 4 * count) {
    fail(ErrorCode::ShapeMismatch, fmt::format("tensor payload is {} bytes, shape needs {}", payload, 4 * count));
  }
  t.values.resize(count);
  const std::size_t base = 12 + header_len;
  for (std::size_t i = 0; i < count; ++i) {
    float v = std::bit_cast<float>(get_u32(bytes, base + 4 * i));
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, fmt::format("non-finite value at flat index {}", i));
    t.values[i] = v;
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  atomic_write_file(path, encode_tensor(tensor));
}

Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file(path));
}

}  // namespace llmseg

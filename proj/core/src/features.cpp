#include "llmseg/features.hpp"

#include <cmath>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

namespace {

// meta may be null when a Tensor was built by hand.
std::string meta_string(const nlohmann::json& meta, const char* key) {
  return meta.is_object() ? meta.value(key, std::string()) : std::string();
}

void check_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) fail(ErrorCode::NonFinite, fmt::format("{} contains non-finite values", what));
}

}  // namespace

void TokenTextFeatures::validate() const {
  if (!descriptor_names.empty() && descriptor_names.size() != tokens.size()) {
    fail(ErrorCode::ShapeMismatch, fmt::format("{} descriptor names for {} token blocks", descriptor_names.size(),
                                               tokens.size()));
  }
  const auto d = dim();
  for (const auto& block : tokens) {
    if (block.rows() < 1) fail(ErrorCode::ShapeMismatch, "text features need at least one token");
    if (block.cols() < 1 || static_cast<std::size_t>(block.cols()) != d) {
      fail(ErrorCode::ShapeMismatch, "text feature blocks disagree on d");
    }
    check_finite(block, "text features");
  }
}

void check_patch_features(const Matrix& values, GridShape grid) {
  if (grid.size() != static_cast<std::size_t>(values.rows())) {
    fail(ErrorCode::ShapeMismatch, fmt::format("grid {}x{} implies {} patches but {} feature rows were given",
                                               grid.rows, grid.cols, grid.size(), values.rows()));
  }
  if (values.cols() < 1) fail(ErrorCode::ShapeMismatch, "image features need d >= 1");
  check_finite(values, "image features");
}

void PatchImageFeatures::validate() const { check_patch_features(values, grid); }

Tensor to_tensor(const TokenTextFeatures& features) {
  features.validate();
  if (features.tokens.empty()) fail(ErrorCode::ShapeMismatch, "no text features to store");
  std::size_t max_tokens = 0;
  std::vector<std::size_t> valid;
  for (const auto& b : features.tokens) {
    max_tokens = std::max(max_tokens, static_cast<std::size_t>(b.rows()));
    valid.push_back(static_cast<std::size_t>(b.rows()));
  }
  const std::size_t n = features.tokens.size(), d = features.dim();
  Tensor t;
  t.shape = {n, max_tokens, d};
  t.values.assign(n * max_tokens * d, 0.0F);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = features.tokens[i];
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        t.values[(i * max_tokens + static_cast<std::size_t>(j)) * d + c] = static_cast<float>(b(j, static_cast<Eigen::Index>(c)));
      }
    }
  }
  t.meta["valid_tokens"] = valid;
  if (!features.descriptor_names.empty()) t.meta["descriptor_names"] = features.descriptor_names;
  if (!features.template_id.empty()) t.meta["template_id"] = features.template_id;
  return t;
}

TokenTextFeatures text_features_from_tensor(const Tensor& tensor) {
  std::size_t n = 1, m = 0, d = 0;
  if (tensor.shape.size() == 2) {
    m = tensor.shape[0];
    d = tensor.shape[1];
  } else if (tensor.shape.size() == 3) {
    n = tensor.shape[0];
    m = tensor.shape[1];
    d = tensor.shape[2];
  } else {
    fail(ErrorCode::ShapeMismatch, fmt::format("text features must be rank 2 or 3, got rank {}", tensor.shape.size()));
  }
  std::vector<std::size_t> valid(n, m);
  if (tensor.meta.contains("valid_tokens")) {
    valid = tensor.meta.at("valid_tokens").get<std::vector<std::size_t>>();
    if (valid.size() != n) fail(ErrorCode::ShapeMismatch, "valid_tokens length differs from descriptor count");
    for (auto v : valid) {
      if (v < 1 || v > m) fail(ErrorCode::ShapeMismatch, "valid_tokens entry outside 1..m_t");
    }
  }
  TokenTextFeatures out;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix block(static_cast<Eigen::Index>(valid[i]), static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < valid[i]; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        block(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = tensor.values[(i * m + j) * d + c];
      }
    }
    out.tokens.push_back(std::move(block));
  }
  if (tensor.meta.contains("descriptor_names")) {
    out.descriptor_names = tensor.meta.at("descriptor_names").get<std::vector<std::string>>();
  }
  out.template_id = meta_string(tensor.meta, "template_id");
  out.validate();
  return out;
}

Tensor to_tensor(const PatchImageFeatures& features) {
  features.validate();
  Tensor t;
  const auto rows = static_cast<std::size_t>(features.values.rows());
  const auto cols = static_cast<std::size_t>(features.values.cols());
  t.shape = {rows, cols};
  t.values.resize(rows * cols);
  for (std::size_t i = 0; i < rows * cols; ++i) t.values[i] = static_cast<float>(features.values.data()[i]);
  t.meta["grid"] = {features.grid.rows, features.grid.cols};
  t.meta["source_size"] = {features.source_size.height, features.source_size.width};
  t.meta["source_image_id"] = features.source_image_id;
  return t;
}

PatchImageFeatures image_features_from_tensor(const Tensor& tensor) {
  PatchImageFeatures out;
  std::size_t m = 0, d = 0;
  if (tensor.shape.size() == 3) {
    out.grid = {tensor.shape[0], tensor.shape[1]};
    m = tensor.shape[0] * tensor.shape[1];
    d = tensor.shape[2];
  } else if (tensor.shape.size() == 2) {
    if (!tensor.meta.contains("grid")) fail(ErrorCode::Format, "rank-2 image features need meta.grid");
    auto g = tensor.meta.at("grid").get<std::vector<std::size_t>>();
    if (g.size() != 2) fail(ErrorCode::Format, "meta.grid must be [rows, cols]");
    out.grid = {g[0], g[1]};
    m = tensor.shape[0];
    d = tensor.shape[1];
  } else {
    fail(ErrorCode::ShapeMismatch, fmt::format("image features must be rank 2 or 3, got rank {}", tensor.shape.size()));
  }
  out.values.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < m * d; ++i) out.values.data()[i] = tensor.values[i];
  if (tensor.meta.contains("source_size")) {
    auto s = tensor.meta.at("source_size").get<std::vector<std::size_t>>();
    if (s.size() == 2) out.source_size = {s[0], s[1]};
  }
  out.source_image_id = meta_string(tensor.meta, "source_image_id");
  out.validate();
  return out;
}

std::vector<Matrix> FeatureSource::text_tokens_batch(std::span<const std::string> prompts) {
  std::vector<Matrix> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) out.push_back(text_tokens(p));
  return out;
}

FileFeatureSource::FileFeatureSource(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path FileFeatureSource::text_path(const std::filesystem::path& dir, const std::string& prompt) {
  return dir / "text" / (sha256_hex(prompt) + ".lseg");
}

std::filesystem::path FileFeatureSource::image_path(const std::filesystem::path& dir, const std::string& image_id) {
  return dir / "images" / (image_id + ".lseg");
}

void FileFeatureSource::write_text(const std::filesystem::path& dir, const std::string& prompt, const Matrix& tokens) {
  TokenTextFeatures f;
  f.tokens.push_back(tokens);
  f.descriptor_names.push_back(prompt);
  write_tensor(text_path(dir, prompt), to_tensor(f));
}

void FileFeatureSource::write_image(const std::filesystem::path& dir, const std::string& image_id,
                                    const PatchImageFeatures& features) {
  write_tensor(image_path(dir, image_id), to_tensor(features));
}

Matrix FileFeatureSource::text_tokens(const std::string& prompt) {
  auto path = text_path(dir_, prompt);
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::MissingInput, fmt::format("no text features for prompt '{}' (expected {})", prompt, path.string()));
  }
  auto f = text_features_from_tensor(read_tensor(path));
  if (f.tokens.size() != 1) fail(ErrorCode::ShapeMismatch, fmt::format("{} holds {} prompts, expected 1", path.string(), f.tokens.size()));
  return std::move(f.tokens.front());
}

PatchImageFeatures FileFeatureSource::image_features(const std::filesystem::path&, const std::string& image_id) {
  auto path = image_path(dir_, image_id);
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::MissingInput, fmt::format("no image features for '{}' (expected {})", image_id, path.string()));
  }
  auto f = image_features_from_tensor(read_tensor(path));
  if (f.source_image_id.empty()) f.source_image_id = image_id;
  return f;
}

}  // namespace llmseg

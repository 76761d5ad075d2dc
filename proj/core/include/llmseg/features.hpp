#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "llmseg/tensor_file.hpp"
#include "llmseg/types.hpp"

namespace llmseg {

/// Token-level text features, one [m_t x d] block per descriptor. Blocks may
/// differ in m_t; padding rows are never stored here.
struct TokenTextFeatures {
  std::vector<Matrix> tokens;
  std::vector<std::string> descriptor_names;
  std::string template_id;

  std::size_t dim() const { return tokens.empty() ? 0 : static_cast<std::size_t>(tokens.front().cols()); }
  void validate() const;
};

/// Patch-level image features [m_i x d] on a row-major grid.
struct PatchImageFeatures {
  Matrix values;
  GridShape grid;
  std::string source_image_id;
  ImageSize source_size;

  void validate() const;
};

/// Padded [n x max_m_t x d] tensor; meta.valid_tokens records real lengths.
Tensor to_tensor(const TokenTextFeatures& features);
/// Accepts [m_t x d], [n x m_t x d]; truncates to meta.valid_tokens if present.
TokenTextFeatures text_features_from_tensor(const Tensor& tensor);

Tensor to_tensor(const PatchImageFeatures& features);
/// Accepts [m_i x d] with meta.grid, or [h_p x w_p x d].
PatchImageFeatures image_features_from_tensor(const Tensor& tensor);

/// Supplies encoder outputs. Implementations are safe for concurrent use.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;

  /// [m_t x d] token features for one prompt.
  virtual Matrix text_tokens(const std::string& prompt) = 0;

  /// Batch form; the default loops over text_tokens().
  virtual std::vector<Matrix> text_tokens_batch(std::span<const std::string> prompts);

  virtual PatchImageFeatures image_features(const std::filesystem::path& image_path, const std::string& image_id) = 0;
};

/// Pre-exported features:
///   {dir}/text/{sha256(prompt)}.lseg    [m_t x d] or [1 x m_t x d]
///   {dir}/images/{image_id}.lseg        [m_i x d], meta {grid, source_size}
class FileFeatureSource final : public FeatureSource {
 public:
  explicit FileFeatureSource(std::filesystem::path dir);

  Matrix text_tokens(const std::string& prompt) override;
  PatchImageFeatures image_features(const std::filesystem::path& image_path, const std::string& image_id) override;

  static std::filesystem::path text_path(const std::filesystem::path& dir, const std::string& prompt);
  static std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& image_id);
  static void write_text(const std::filesystem::path& dir, const std::string& prompt, const Matrix& tokens);
  static void write_image(const std::filesystem::path& dir, const std::string& image_id,
                          const PatchImageFeatures& features);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

/// HTTP client for an embedding service:
///   POST {url}/encode_text  {"texts":[...]} -> {"features":[[[..]..]..]}
///   POST {url}/encode_image multipart "image" -> {"features":[[..]..], "grid":[h,w]}
class EmbedClient {
 public:
  explicit EmbedClient(std::string base_url);

  std::vector<Matrix> encode_text(std::span<const std::string> texts);
  PatchImageFeatures encode_image(const std::filesystem::path& image_path);

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::string base_url_;
  std::atomic<std::size_t> calls_{0};
};

/// Service-backed source with an on-disk cache keyed by content hash; a
/// cached (backend, input) pair never reaches the service again.
class RemoteFeatureSource final : public FeatureSource {
 public:
  RemoteFeatureSource(std::string embed_url, std::filesystem::path cache_dir, std::string backend_id = "default");

  Matrix text_tokens(const std::string& prompt) override;
  std::vector<Matrix> text_tokens_batch(std::span<const std::string> prompts) override;
  PatchImageFeatures image_features(const std::filesystem::path& image_path, const std::string& image_id) override;

  std::size_t service_calls() const { return client_.calls(); }

 private:
  std::filesystem::path text_cache(const std::string& prompt) const;

  EmbedClient client_;
  std::filesystem::path cache_root_;
};

/// One-shot service calls without caching.
TokenTextFeatures encode_text_remote(std::span<const std::string> prompts, const std::string& embed_url);
PatchImageFeatures encode_image_remote(const std::filesystem::path& image_path, const std::string& embed_url);

/// Checks rows*cols == m_i and all entries finite.
void check_patch_features(const Matrix& values, GridShape grid);

}  // namespace llmseg

// Eigen first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include "llmseg/features.hpp"
#include "llmseg/image_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/llm_client.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

using nlohmann::json;

namespace {

Matrix matrix_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty()) fail(ErrorCode::ShapeMismatch, "feature matrix must be a non-empty array");
  const auto n = rows.size();
  const auto d = rows.at(0).size();
  if (d == 0) fail(ErrorCode::ShapeMismatch, "feature rows must be non-empty");
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = rows.at(i);
    if (row.size() != d) fail(ErrorCode::ShapeMismatch, "ragged feature matrix from embedding service");
    for (std::size_t c = 0; c < d; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row.at(c).get<double>();
  }
  return m;
}

json post(const std::string& base_url, const std::string& route, const std::function<httplib::Result(httplib::Client&, const std::string&)>& send) {
  auto url = split_url(base_url);
  httplib::Client client(url.scheme_host_port);
  client.set_read_timeout(std::chrono::seconds(120));
  auto res = send(client, url.path_prefix + route);
  if (!res) fail(ErrorCode::Transport, fmt::format("embedding request {} failed: {}", route, httplib::to_string(res.error())));
  if (res->status != 200) fail(ErrorCode::Transport, fmt::format("embedding service {} returned HTTP {}", route, res->status));
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    fail(ErrorCode::Transport, fmt::format("embedding service {} returned invalid JSON: {}", route, e.what()));
  }
}

}  // namespace

EmbedClient::EmbedClient(std::string base_url) : base_url_(std::move(base_url)) {
  if (base_url_.empty()) fail(ErrorCode::Config, "no embedding service: set LLMSEG_EMBED_URL");
}

std::vector<Matrix> EmbedClient::encode_text(std::span<const std::string> texts) {
  calls_.fetch_add(1);
  json body = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  auto reply = post(base_url_, "/encode_text", [&](httplib::Client& c, const std::string& path) {
    return c.Post(path, body.dump(), "application/json");
  });
  try {
    const auto& features = reply.at("features");
    if (features.size() != texts.size()) {
      fail(ErrorCode::ShapeMismatch, fmt::format("sent {} texts, service returned {} feature blocks", texts.size(), features.size()));
    }
    std::vector<Matrix> out;
    std::size_t d = 0;
    for (const auto& block : features) {
      auto m = matrix_from_json(block);
      if (d != 0 && static_cast<std::size_t>(m.cols()) != d) fail(ErrorCode::ShapeMismatch, "service returned inconsistent d");
      d = static_cast<std::size_t>(m.cols());
      if (!m.allFinite()) fail(ErrorCode::NonFinite, "service returned non-finite text features");
      out.push_back(std::move(m));
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::Transport, fmt::format("malformed encode_text response: {}", e.what()));
  }
}

PatchImageFeatures EmbedClient::encode_image(const std::filesystem::path& image_path) {
  calls_.fetch_add(1);
  const auto bytes = read_file(image_path);
  httplib::MultipartFormDataItems items = {{"image", bytes, image_path.filename().string(), "application/octet-stream"}};
  auto reply = post(base_url_, "/encode_image", [&](httplib::Client& c, const std::string& path) {
    return c.Post(path, items);
  });
  try {
    PatchImageFeatures out;
    out.values = matrix_from_json(reply.at("features"));
    auto grid = reply.at("grid").get<std::vector<std::size_t>>();
    if (grid.size() != 2) fail(ErrorCode::ShapeMismatch, "grid must be [rows, cols]");
    out.grid = {grid[0], grid[1]};
    out.source_image_id = image_path.stem().string();
    // The service does not report the source size; take it from the PNG header when there is one.
    try {
      out.source_size = read_png_size(image_path);
    } catch (const Error&) {
    }
    out.validate();
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::Transport, fmt::format("malformed encode_image response: {}", e.what()));
  }
}

RemoteFeatureSource::RemoteFeatureSource(std::string embed_url, std::filesystem::path cache_dir, std::string backend_id)
    : client_(std::move(embed_url)), cache_root_(std::move(cache_dir) / slugify(backend_id)) {}

std::filesystem::path RemoteFeatureSource::text_cache(const std::string& prompt) const {
  return FileFeatureSource::text_path(cache_root_, prompt);
}

Matrix RemoteFeatureSource::text_tokens(const std::string& prompt) {
  return text_tokens_batch(std::span<const std::string>(&prompt, 1)).front();
}

std::vector<Matrix> RemoteFeatureSource::text_tokens_batch(std::span<const std::string> prompts) {
  std::vector<Matrix> out(prompts.size());
  std::vector<std::string> missing;
  std::vector<std::size_t> missing_index;
  FileFeatureSource cache(cache_root_);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (std::filesystem::exists(text_cache(prompts[i]))) {
      out[i] = cache.text_tokens(prompts[i]);
    } else {
      missing.push_back(prompts[i]);
      missing_index.push_back(i);
    }
  }
  if (!missing.empty()) {
    auto fresh = client_.encode_text(missing);
    for (std::size_t k = 0; k < missing.size(); ++k) {
      FileFeatureSource::write_text(cache_root_, missing[k], fresh[k]);
      out[missing_index[k]] = std::move(fresh[k]);
    }
  }
  return out;
}

PatchImageFeatures RemoteFeatureSource::image_features(const std::filesystem::path& image_path,
                                                       const std::string& image_id) {
  const auto key = sha256_hex(read_file(image_path));
  const auto path = FileFeatureSource::image_path(cache_root_, key);
  if (std::filesystem::exists(path)) {
    auto f = image_features_from_tensor(read_tensor(path));
    f.source_image_id = image_id;
    return f;
  }
  auto f = client_.encode_image(image_path);
  f.source_image_id = image_id;
  FileFeatureSource::write_image(cache_root_, key, f);
  return f;
}

TokenTextFeatures encode_text_remote(std::span<const std::string> prompts, const std::string& embed_url) {
  EmbedClient client(embed_url);
  TokenTextFeatures out;
  out.tokens = client.encode_text(prompts);
  out.descriptor_names.assign(prompts.begin(), prompts.end());
  out.validate();
  return out;
}

PatchImageFeatures encode_image_remote(const std::filesystem::path& image_path, const std::string& embed_url) {
  EmbedClient client(embed_url);
  return client.encode_image(image_path);
}

}  // namespace llmseg

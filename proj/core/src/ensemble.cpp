#include "llmseg/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "llmseg/error.hpp"
#include "llmseg/util.hpp"

namespace llmseg {

std::string_view to_string(EnsembleMethod method) {
  switch (method) {
    case EnsembleMethod::Paper: return "paper";
    case EnsembleMethod::Average: return "average";
    case EnsembleMethod::CrossAttention: return "cross_attention";
    case EnsembleMethod::MaxSimilarity: return "max_similarity";
  }
  return "unknown";
}

EnsembleMethod parse_ensemble_method(std::string_view text) {
  const auto t = to_lower(trim(text));
  for (auto m : {EnsembleMethod::Paper, EnsembleMethod::Average, EnsembleMethod::CrossAttention,
                 EnsembleMethod::MaxSimilarity}) {
    if (t == to_string(m)) return m;
  }
  fail(ErrorCode::InvalidArgument,
       fmt::format("unknown ensemble method '{}' (paper, average, cross_attention, max_similarity)", text));
}

void EnsembleConfig::validate() const {
  if (!(lambda_super >= 0.0 && lambda_super <= 1.0)) {
    fail(ErrorCode::InvalidArgument, fmt::format("lambda_super {} outside [0,1]", lambda_super));
  }
  if (top_k_image < 1) fail(ErrorCode::InvalidArgument, "top_k_image must be at least 1");
}

namespace {

void require_dim(const Matrix& a, Eigen::Index d, std::string_view what) {
  if (a.cols() != d) {
    fail(ErrorCode::ShapeMismatch, fmt::format("{}: feature dimension {} does not match {}", what, a.cols(), d));
  }
}

}  // namespace

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) return logits;
  const double top = logits.maxCoeff();
  Vector e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

Matrix l2_normalize_rows(const Matrix& m, bool allow_zero) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0.0) {
      out.row(i) /= norm;
    } else if (!allow_zero) {
      fail(ErrorCode::DegenerateDescriptor, fmt::format("descriptor row {} has zero norm", i));
    }
  }
  return out;
}

Vector baseline_similarity(const Matrix& image_feats, const Matrix& text_tokens) {
  require_dim(text_tokens, image_feats.cols(), "baseline_similarity");
  if (text_tokens.rows() == 0) fail(ErrorCode::ShapeMismatch, "baseline_similarity needs at least one token");
  // Mean over tokens commutes with the dot product.
  const Vector mean_token = text_tokens.colwise().mean().transpose();
  return image_feats * mean_token;
}

Vector select_token_max(const Matrix& tokens) {
  if (tokens.rows() == 0) fail(ErrorCode::ShapeMismatch, "empty token axis");
  // + 0.0 folds -0 into +0, so the result does not depend on token order when both occur.
  return (tokens.colwise().maxCoeff().transpose().array() + 0.0).matrix();
}

DescriptorMatrix select_text_features(std::span<const Matrix> text_tokens, std::vector<std::string> names) {
  if (!names.empty() && names.size() != text_tokens.size()) {
    fail(ErrorCode::ShapeMismatch, "descriptor names do not match token blocks");
  }
  DescriptorMatrix out;
  out.names = std::move(names);
  if (text_tokens.empty()) return out;
  const auto d = text_tokens.front().cols();
  out.values.resize(static_cast<Eigen::Index>(text_tokens.size()), d);
  for (std::size_t i = 0; i < text_tokens.size(); ++i) {
    require_dim(text_tokens[i], d, "select_text_features");
    out.values.row(static_cast<Eigen::Index>(i)) = select_token_max(text_tokens[i]).transpose();
  }
  return out;
}

Matrix attention_map(const Matrix& image_feats, const DescriptorMatrix& descriptors, bool normalize) {
  require_dim(descriptors.values, image_feats.cols(), "attention_map");
  if (!normalize) return descriptors.values * image_feats.transpose();
  const Matrix f = l2_normalize_rows(image_feats, true);
  const Matrix d = descriptors.normalized ? descriptors.values : l2_normalize_rows(descriptors.values, false);
  return d * f.transpose();
}

Matrix select_image_features(const Matrix& image_feats, std::size_t k) {
  const auto m = static_cast<std::size_t>(image_feats.rows());
  if (k < 1 || k > m) fail(ErrorCode::InvalidArgument, fmt::format("top-k {} outside 1..{}", k, m));
  Matrix out(static_cast<Eigen::Index>(k), image_feats.cols());
  std::vector<double> column(m);
  for (Eigen::Index c = 0; c < image_feats.cols(); ++c) {
    for (std::size_t p = 0; p < m; ++p) column[p] = image_feats(static_cast<Eigen::Index>(p), c);
    // Equal values are indistinguishable in the output, so the tie order of
    // a stable sort is preserved trivially.
    std::partial_sort(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(k), column.end(),
                      std::greater<>());
    for (std::size_t r = 0; r < k; ++r) out(static_cast<Eigen::Index>(r), c) = column[r];
  }
  return out;
}

FusionTrace fuse_descriptors(const Matrix& image_feats, const DescriptorMatrix& descriptors, std::size_t k) {
  if (descriptors.size() == 0) fail(ErrorCode::InvalidArgument, "fuse_descriptors needs at least one descriptor");
  require_dim(descriptors.values, image_feats.cols(), "fuse_descriptors");
  FusionTrace t;
  t.i_pool = select_image_features(image_feats, k).colwise().mean().transpose();
  t.relation = descriptors.values.array().rowwise() * t.i_pool.transpose().array();
  t.row_max = t.relation.rowwise().maxCoeff();
  t.weights = softmax(t.row_max);
  t.fused = descriptors.values.transpose() * t.weights;
  return t;
}

Vector ensemble_attention(const Matrix& image_feats, const Vector& fused) {
  if (fused.size() != image_feats.cols()) {
    fail(ErrorCode::ShapeMismatch, fmt::format("fused descriptor has d={}, image features d={}", fused.size(), image_feats.cols()));
  }
  return image_feats * fused;
}

Vector mix_superclass(const Vector& a_super, const Vector& a_sub, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::InvalidArgument, fmt::format("lambda {} outside [0,1]", lambda));
  if (a_super.size() != a_sub.size()) {
    fail(ErrorCode::ShapeMismatch, fmt::format("map lengths differ: {} vs {}", a_super.size(), a_sub.size()));
  }
  auto in_unit = [](const Vector& v) { return v.size() == 0 || (v.minCoeff() >= 0.0 && v.maxCoeff() <= 1.0); };
  if (!in_unit(a_super) || !in_unit(a_sub)) fail(ErrorCode::InvalidArgument, "mix_superclass expects maps normalized to [0,1]");
  return lambda * a_super + (1.0 - lambda) * a_sub;
}

DescriptorMatrix average_over_templates(std::span<const DescriptorMatrix> sets, bool normalize) {
  if (sets.empty()) fail(ErrorCode::InvalidArgument, "no descriptor sets to average");
  const auto& first = sets.front();
  Matrix sum = Matrix::Zero(first.values.rows(), first.values.cols());
  for (const auto& s : sets) {
    if (s.values.rows() != first.values.rows() || s.values.cols() != first.values.cols()) {
      fail(ErrorCode::ShapeMismatch, "descriptor sets differ in shape across templates");
    }
    if (s.names != first.names) fail(ErrorCode::ShapeMismatch, "descriptor sets differ in order across templates");
    sum += s.values;
  }
  DescriptorMatrix out;
  out.names = first.names;
  out.values = sum / static_cast<double>(sets.size());
  if (normalize) {
    for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
      const double norm = out.values.row(i).norm();
      if (!(norm > 1e-12)) {
        const auto& name = out.names.empty() ? std::to_string(i) : out.names[static_cast<std::size_t>(i)];
        fail(ErrorCode::DegenerateDescriptor, fmt::format("descriptor '{}' averages to zero across templates", name));
      }
      out.values.row(i) /= norm;
    }
    out.normalized = true;
  }
  return out;
}

Vector alt_ensemble(EnsembleMethod method, const Matrix& image_feats, const DescriptorMatrix& descriptors,
                    const Matrix& per_subclass_maps, std::size_t k) {
  if (per_subclass_maps.rows() == 0) fail(ErrorCode::InvalidArgument, "alt_ensemble needs at least one map");
  switch (method) {
    case EnsembleMethod::Average:
      return per_subclass_maps.colwise().mean().transpose();
    case EnsembleMethod::MaxSimilarity:
      return per_subclass_maps.colwise().maxCoeff().transpose();
    case EnsembleMethod::CrossAttention: {
      if (static_cast<std::size_t>(per_subclass_maps.rows()) != descriptors.size()) {
        fail(ErrorCode::ShapeMismatch, "one map per descriptor required");
      }
      require_dim(descriptors.values, image_feats.cols(), "alt_ensemble");
      const Vector pool = select_image_features(image_feats, k).colwise().mean().transpose();
      const Vector w = softmax(descriptors.values * pool);
      return per_subclass_maps.transpose() * w;
    }
    case EnsembleMethod::Paper:
      break;
  }
  fail(ErrorCode::InvalidArgument, fmt::format("alt_ensemble does not handle method '{}'", to_string(method)));
}

Vector subclass_ensemble_map(const Matrix& image_feats, const DescriptorMatrix& descriptors,
                             const EnsembleConfig& config) {
  const std::size_t k = std::min<std::size_t>(config.top_k_image, static_cast<std::size_t>(image_feats.rows()));
  DescriptorMatrix d = descriptors;
  Matrix f;
  if (config.normalize_features) {
    f = l2_normalize_rows(image_feats, true);
    if (!d.normalized) {
      d.values = l2_normalize_rows(d.values, false);
      d.normalized = true;
    }
  } else {
    f = image_feats;
  }
  if (config.method == EnsembleMethod::Paper) {
    return ensemble_attention(f, fuse_descriptors(f, d, k).fused);
  }
  return alt_ensemble(config.method, f, d, attention_map(f, d, false), k);
}

Vector superclass_map(const Matrix& image_feats, const Vector& descriptor, const EnsembleConfig& config) {
  DescriptorMatrix d;
  d.values = descriptor.transpose();
  return attention_map(image_feats, d, config.normalize_features).row(0).transpose();
}

}  // namespace llmseg

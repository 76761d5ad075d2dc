#include "llmseg/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <fmt/format.h>

#include "llmseg/error.hpp"

namespace llmseg {

void CrfParams::validate() const {
  if (iterations < 0) fail(ErrorCode::InvalidArgument, "CRF iterations must be >= 0");
  if (!(gauss_sxy > 0.0) || !(bilat_sxy > 0.0) || !(bilat_srgb > 0.0)) {
    fail(ErrorCode::InvalidArgument, "CRF bandwidths must be positive");
  }
  if (!(gauss_weight >= 0.0) || !(bilat_weight >= 0.0)) fail(ErrorCode::InvalidArgument, "CRF weights must be >= 0");
}

int kernel_radius(double sxy) { return static_cast<int>(std::ceil(3.0 * sxy)); }

ImageSize UnaryField::size() const {
  if (probs.empty()) return {};
  return {static_cast<std::size_t>(probs.front().rows()), static_cast<std::size_t>(probs.front().cols())};
}

void UnaryField::validate() const {
  if (probs.empty()) fail(ErrorCode::InvalidArgument, "unary field has zero labels");
  const auto size0 = size();
  Matrix total = Matrix::Zero(static_cast<Eigen::Index>(size0.height), static_cast<Eigen::Index>(size0.width));
  for (const auto& p : probs) {
    if (static_cast<std::size_t>(p.rows()) != size0.height || static_cast<std::size_t>(p.cols()) != size0.width) {
      fail(ErrorCode::ShapeMismatch, "unary planes differ in size");
    }
    if (!p.allFinite() || p.minCoeff() < 0.0) fail(ErrorCode::InvalidArgument, "unary probabilities must be finite and >= 0");
    total += p;
  }
  if ((total.array() - 1.0).abs().maxCoeff() > 1e-5) fail(ErrorCode::InvalidArgument, "unary probabilities must sum to 1 per pixel");
}

UnaryField to_unary(std::span<const Matrix> score_maps, BackgroundSpec background) {
  if (score_maps.empty()) fail(ErrorCode::InvalidArgument, "to_unary needs at least one score map");
  const auto h = score_maps.front().rows();
  const auto w = score_maps.front().cols();
  for (const auto& s : score_maps) {
    if (s.rows() != h || s.cols() != w) fail(ErrorCode::ShapeMismatch, "score maps differ in size");
    if (!s.allFinite()) fail(ErrorCode::NonFinite, "score maps contain non-finite values");
    if (s.size() > 0 && (s.minCoeff() < 0.0 || s.maxCoeff() > 1.0)) {
      fail(ErrorCode::InvalidArgument, "score maps must be normalized to [0,1]");
    }
  }
  const std::size_t labels = score_maps.size() + 1;
  UnaryField out;
  out.probs.assign(labels, Matrix(h, w));
  std::vector<double> logits(labels);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double top_fg = 0.0;
      for (std::size_t c = 0; c < score_maps.size(); ++c) {
        logits[c + 1] = score_maps[c](y, x);
        top_fg = std::max(top_fg, logits[c + 1]);
      }
      logits[0] = background.mode == BackgroundMode::Constant ? background.value : 1.0 - top_fg;
      const double top = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (auto& v : logits) {
        v = std::exp(v - top);
        sum += v;
      }
      for (std::size_t l = 0; l < labels; ++l) out.probs[l](y, x) = logits[l] / sum;
    }
  }
  return out;
}

LabelMap argmax_labels(const std::vector<Matrix>& planes) {
  if (planes.empty()) fail(ErrorCode::InvalidArgument, "no label planes");
  if (planes.size() > kIgnoreLabel) fail(ErrorCode::InvalidArgument, "too many labels for 8-bit output");
  const auto h = static_cast<std::size_t>(planes.front().rows());
  const auto w = static_cast<std::size_t>(planes.front().cols());
  LabelMap out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t best = 0;
      for (std::size_t l = 1; l < planes.size(); ++l) {
        if (planes[l](static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) >
            planes[best](static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x))) {
          best = l;
        }
      }
      out.at(y, x) = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

namespace {

// Offsets tables for a square window of half-width R: value at (dy + R) * (2R+1) + (dx + R).
std::vector<double> spatial_table(int radius, int window, double sxy) {
  const int side = 2 * radius + 1;
  std::vector<double> t(static_cast<std::size_t>(side * side), 0.0);
  const double inv = 1.0 / (2.0 * sxy * sxy);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (std::abs(dx) > window || std::abs(dy) > window) continue;
      t[static_cast<std::size_t>((dy + radius) * side + dx + radius)] = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return t;
}

}  // namespace

CrfResult mean_field(const UnaryField& unary, const RgbImage& image, const CrfParams& params, unsigned threads,
                     const CrfObserver& observer) {
  params.validate();
  unary.validate();
  const auto size = unary.size();
  if (image.height != size.height || image.width != size.width) {
    fail(ErrorCode::ShapeMismatch, fmt::format("image is {}x{}, unary is {}x{}", image.height, image.width,
                                               size.height, size.width));
  }
  const std::size_t H = size.height, W = size.width, N = H * W, L = unary.labels();

  // Pixel-major working buffers.
  std::vector<double> log_unary(N * L), q(N * L), next(N * L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& p = unary.probs[l];
    for (std::size_t i = 0; i < N; ++i) {
      const double v = p.data()[i];
      q[i * L + l] = v;
      log_unary[i * L + l] = std::log(std::max(v, 1e-300));
    }
  }

  auto to_planes = [&](const std::vector<double>& buf) {
    std::vector<Matrix> planes(L, Matrix(static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(W)));
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t i = 0; i < N; ++i) planes[l].data()[i] = buf[i * L + l];
    }
    return planes;
  };

  const bool has_pairwise = params.gauss_weight > 0.0 || params.bilat_weight > 0.0;
  if (params.iterations == 0 || !has_pairwise || N == 1) {
    // Messages are identically zero: every update reproduces the unary.
    for (int it = 1; it <= params.iterations; ++it) {
      if (observer) observer(it, unary.probs);
    }
    CrfResult r{unary.probs, argmax_labels(unary.probs)};
    return r;
  }

  const int rg = params.gauss_weight > 0.0 ? kernel_radius(params.gauss_sxy) : 0;
  const int rb = params.bilat_weight > 0.0 ? kernel_radius(params.bilat_sxy) : 0;
  const int R = std::max(rg, rb);
  const int side = 2 * R + 1;
  std::vector<double> gauss = spatial_table(R, params.gauss_weight > 0.0 ? rg : -1, params.gauss_sxy);
  std::vector<double> bilat = spatial_table(R, params.bilat_weight > 0.0 ? rb : -1, params.bilat_sxy);
  for (auto& v : gauss) v *= params.gauss_weight;
  for (auto& v : bilat) v *= params.bilat_weight;

  // Color affinity indexed by squared RGB distance.
  const std::size_t max_d2 = 3 * 255 * 255;
  std::vector<double> color(max_d2 + 1);
  const double inv_rgb = 1.0 / (2.0 * params.bilat_srgb * params.bilat_srgb);
  for (std::size_t d2 = 0; d2 <= max_d2; ++d2) color[d2] = std::exp(-static_cast<double>(d2) * inv_rgb);

  auto update_rows = [&](std::size_t y0, std::size_t y1) {
    std::vector<double> acc(L), logits(L);
    for (std::size_t y = y0; y < y1; ++y) {
      const int iy = static_cast<int>(y);
      const int ya = std::max(0, iy - R), yb = std::min(static_cast<int>(H) - 1, iy + R);
      for (std::size_t x = 0; x < W; ++x) {
        const int ix = static_cast<int>(x);
        const int xa = std::max(0, ix - R), xb = std::min(static_cast<int>(W) - 1, ix + R);
        const std::uint8_t* ci = image.at(y, x);
        std::fill(acc.begin(), acc.end(), 0.0);
        double ksum = 0.0;
        for (int jy = ya; jy <= yb; ++jy) {
          const int row_off = (jy - iy + R) * side + R - ix;
          for (int jx = xa; jx <= xb; ++jx) {
            if (jy == iy && jx == ix) continue;
            const auto t = static_cast<std::size_t>(row_off + jx);
            double k = gauss[t];
            if (bilat[t] != 0.0) {
              const std::uint8_t* cj = image.at(static_cast<std::size_t>(jy), static_cast<std::size_t>(jx));
              const int d0 = ci[0] - cj[0], d1 = ci[1] - cj[1], d2 = ci[2] - cj[2];
              k += bilat[t] * color[static_cast<std::size_t>(d0 * d0 + d1 * d1 + d2 * d2)];
            }
            if (k == 0.0) continue;
            ksum += k;
            const double* qj = &q[(static_cast<std::size_t>(jy) * W + static_cast<std::size_t>(jx)) * L];
            for (std::size_t l = 0; l < L; ++l) acc[l] += k * qj[l];
          }
        }
        // Potts: message_l = sum_j k_ij * (1 - Q_j(l)).
        const std::size_t i = y * W + x;
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < L; ++l) {
          logits[l] = log_unary[i * L + l] - (ksum - acc[l]);
          top = std::max(top, logits[l]);
        }
        double sum = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
          logits[l] = std::exp(logits[l] - top);
          sum += logits[l];
        }
        for (std::size_t l = 0; l < L; ++l) next[i * L + l] = logits[l] / sum;
      }
    }
  };

  unsigned workers = threads == 0 ? std::max(1U, std::thread::hardware_concurrency()) : threads;
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, H));

  for (int it = 1; it <= params.iterations; ++it) {
    if (workers <= 1) {
      update_rows(0, H);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t chunk = (H + workers - 1) / workers;
      for (unsigned w = 0; w < workers; ++w) {
        const std::size_t y0 = w * chunk, y1 = std::min(H, y0 + chunk);
        if (y0 < y1) pool.emplace_back(update_rows, y0, y1);
      }
    }
    q.swap(next);
    if (observer) observer(it, to_planes(q));
  }

  CrfResult r;
  r.marginals = to_planes(q);
  r.labels = argmax_labels(r.marginals);
  return r;
}

}  // namespace llmseg

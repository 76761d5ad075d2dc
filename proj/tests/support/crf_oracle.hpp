#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "llmseg/crf.hpp"

namespace llmseg::test {

/// Direct O(N^2) mean-field reference: every pixel pair is visited, kernels are
/// evaluated with std::exp on the spot. Same truncation rule as the library
/// (square window of half-width ceil(3 sxy) per kernel), nothing else shared.
inline std::vector<Matrix> naive_mean_field(const std::vector<Matrix>& unary, const RgbImage& img, const CrfParams& p) {
  const auto H = static_cast<long>(unary[0].rows()), W = static_cast<long>(unary[0].cols());
  const auto L = unary.size();
  const long rg = static_cast<long>(std::ceil(3.0 * p.gauss_sxy));
  const long rb = static_cast<long>(std::ceil(3.0 * p.bilat_sxy));
  std::vector<Matrix> q = unary;
  for (int it = 0; it < p.iterations; ++it) {
    std::vector<Matrix> next = q;
    for (long iy = 0; iy < H; ++iy) {
      for (long ix = 0; ix < W; ++ix) {
        std::vector<double> msg(L, 0.0);
        for (long jy = 0; jy < H; ++jy) {
          for (long jx = 0; jx < W; ++jx) {
            if (jy == iy && jx == ix) continue;
            const long dy = jy - iy, dx = jx - ix;
            const double d2 = static_cast<double>(dx * dx + dy * dy);
            double k = 0.0;
            if (std::labs(dx) <= rg && std::labs(dy) <= rg) {
              k += p.gauss_weight * std::exp(-d2 / (2.0 * p.gauss_sxy * p.gauss_sxy));
            }
            if (std::labs(dx) <= rb && std::labs(dy) <= rb) {
              const auto* a = img.at(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              const auto* b = img.at(static_cast<std::size_t>(jy), static_cast<std::size_t>(jx));
              double c2 = 0.0;
              for (int ch = 0; ch < 3; ++ch) c2 += (double(a[ch]) - double(b[ch])) * (double(a[ch]) - double(b[ch]));
              k += p.bilat_weight * std::exp(-d2 / (2.0 * p.bilat_sxy * p.bilat_sxy) - c2 / (2.0 * p.bilat_srgb * p.bilat_srgb));
            }
            for (std::size_t l = 0; l < L; ++l) msg[l] += k * (1.0 - q[l](jy, jx));
          }
        }
        std::vector<double> e(L);
        double mx = -1e300;
        for (std::size_t l = 0; l < L; ++l) {
          e[l] = std::log(std::max(unary[l](iy, ix), 1e-300)) - msg[l];
          mx = std::max(mx, e[l]);
        }
        double z = 0.0;
        for (auto& v : e) z += (v = std::exp(v - mx));
        for (std::size_t l = 0; l < L; ++l) next[l](iy, ix) = e[l] / z;
      }
    }
    q = std::move(next);
  }
  return q;
}

}  // namespace llmseg::test

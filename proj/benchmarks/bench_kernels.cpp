#include <random>

#include <benchmark/benchmark.h>

#include "llmseg/crf.hpp"
#include "llmseg/ensemble.hpp"
#include "llmseg/image_io.hpp"
#include "llmseg/mask_ops.hpp"

using namespace llmseg;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// ViT-B/16 at 288px: 18x18 patches, 512-d.
constexpr Eigen::Index kPatches = 324;
constexpr Eigen::Index kDim = 512;

void BM_AttentionMap(benchmark::State& state) {
  const Matrix f = random_matrix(kPatches, kDim, 1);
  const DescriptorMatrix d{random_matrix(state.range(0), kDim, 2), {}, false};
  for (auto _ : state) benchmark::DoNotOptimize(attention_map(f, d, true));
}
BENCHMARK(BM_AttentionMap)->Arg(1)->Arg(10)->Arg(50);

void BM_SubclassEnsemble(benchmark::State& state) {
  const Matrix f = random_matrix(kPatches, kDim, 3);
  const DescriptorMatrix d{random_matrix(state.range(0), kDim, 4), {}, false};
  EnsembleConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(subclass_ensemble_map(f, d, cfg));
}
BENCHMARK(BM_SubclassEnsemble)->Arg(5)->Arg(10)->Arg(20);

void BM_Upsample(benchmark::State& state) {
  const Matrix g = random_matrix(18, 18, 5);
  const auto side = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(upsample_bilinear(g, {side, side}));
}
BENCHMARK(BM_Upsample)->Arg(288)->Arg(512);

void BM_MeanField(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  std::vector<Matrix> scores;
  for (int c = 0; c < 2; ++c) {
    scores.push_back(((random_matrix(static_cast<Eigen::Index>(side), static_cast<Eigen::Index>(side), 6 + c).array() + 1.0) / 2.0).matrix());
  }
  const auto unary = to_unary(scores);
  RgbImage img(side, side);
  std::mt19937 rng(9);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng());
  CrfParams p;
  p.bilat_sxy = static_cast<double>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(mean_field(unary, img, p));
}
// Bilateral window radius dominates: 3 * sxy per side.
BENCHMARK(BM_MeanField)->Args({48, 5})->Args({48, 20})->Args({96, 10})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "owr/evaldump.hpp"
#include "owr/geometry.hpp"
#include "owr/metrics.hpp"
#include "owr/scores.hpp"

namespace {

owr::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  owr::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

std::vector<double> column(const owr::Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

void BM_Auroc(benchmark::State& state) {
  const auto n = state.range(0);
  const auto id = column(gaussian(n, 1, 1));
  auto ood = column(gaussian(n, 1, 2));
  for (double& v : ood) v += 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(owr::auroc(id, ood));
  state.SetComplexityN(n);
}
BENCHMARK(BM_Auroc)->RangeMultiplier(4)->Range(1 << 10, 1 << 18)->Complexity(benchmark::oNLogN);

void BM_Energy(benchmark::State& state) {
  const owr::Matrix logits = gaussian(state.range(0), 100, 3);
  for (auto _ : state) benchmark::DoNotOptimize(owr::energy(logits));
}
BENCHMARK(BM_Energy)->Arg(10000);

void BM_Knn(benchmark::State& state) {
  owr::EvalDump fit;
  fit.features = gaussian(state.range(0), 128, 4);
  const owr::KnnModel model = owr::fit_knn(fit, 10);
  const owr::Matrix queries = gaussian(256, 128, 5);
  for (auto _ : state) benchmark::DoNotOptimize(owr::score_knn(model, queries));
}
BENCHMARK(BM_Knn)->Arg(2000)->Arg(8000);

void BM_IntrinsicDim(benchmark::State& state) {
  const owr::Matrix x = gaussian(state.range(0), 64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(owr::intrinsic_dim_mle(x));
}
BENCHMARK(BM_IntrinsicDim)->Arg(1000)->Arg(3000)->Unit(benchmark::kMillisecond);

void BM_ParticipationRatio(benchmark::State& state) {
  const owr::Matrix x = gaussian(5000, state.range(0), 7);
  for (auto _ : state) benchmark::DoNotOptimize(owr::participation_ratio(x));
}
BENCHMARK(BM_ParticipationRatio)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

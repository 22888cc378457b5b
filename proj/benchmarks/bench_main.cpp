#include <benchmark/benchmark.h>

#include <random>

#include "popusense/evalkit.hpp"
#include "popusense/hypergraph.hpp"
#include "popusense/pdc_core.hpp"
#include "popusense/popusense.hpp"

using namespace popusense;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

Tensor4 random_images(int n, int s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor4 x(n, 1, s, s);
  for (auto& v : x.data) v = u(rng);
  return x;
}

void BM_KnnHyperedges(benchmark::State& state) {
  const auto n = state.range(0);
  const auto x = random_matrix(n, 64, 1);
  for (auto _ : state) benchmark::DoNotOptimize(hypergraph::knn_hyperedges(x, 8));
  state.SetComplexityN(n);
}
BENCHMARK(BM_KnnHyperedges)->RangeMultiplier(2)->Range(16, 512)->Complexity();

void BM_HgConv(benchmark::State& state) {
  const auto n = state.range(0);
  const auto x = random_matrix(n, 64, 2);
  const auto g = hypergraph::knn_hyperedges(x, 8);
  hypergraph::ConvParams p{random_matrix(64, 64, 3), Eigen::VectorXd::Zero(64), hypergraph::Activation::relu};
  for (auto _ : state) benchmark::DoNotOptimize(hypergraph::hgconv(x, g, p));
  state.SetComplexityN(n);
}
BENCHMARK(BM_HgConv)->RangeMultiplier(2)->Range(16, 512)->Complexity();

void BM_HgConvGrad(benchmark::State& state) {
  const auto x = random_matrix(272, 64, 4);
  const auto g = hypergraph::knn_hyperedges(x, 8);
  hypergraph::ConvParams p{random_matrix(64, 64, 5), Eigen::VectorXd::Zero(64), hypergraph::Activation::relu};
  const auto up = random_matrix(272, 64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(hypergraph::hgconv_grad(x, g, p, up));
}
BENCHMARK(BM_HgConvGrad);

void BM_Encode(benchmark::State& state) {
  const auto m = pdc::ModelParams::initialize(64, 64, 7);
  const auto x = random_images(static_cast<int>(state.range(0)), 64, 8);
  for (auto _ : state) benchmark::DoNotOptimize(pdc::encode(x, m));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encode)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Decode(benchmark::State& state) {
  const auto m = pdc::ModelParams::initialize(64, 64, 9);
  const auto z = pdc::encode(random_images(static_cast<int>(state.range(0)), 64, 10), m);
  for (auto _ : state) benchmark::DoNotOptimize(pdc::decode(z, m));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Decode)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_RefineWide(benchmark::State& state) {
  auto cfg = context::PopuSenseConfig::defaults(context::Variant::wide);
  const auto p = context::RefinerParams::initialize(64, cfg.layers, 11);
  const auto z = pdc::encode(random_images(16, 64, 12), pdc::ModelParams::initialize(64, 64, 13));
  context::MemoryBank bank(cfg.bank_capacity, 64);
  bank.push(random_matrix(static_cast<Eigen::Index>(cfg.bank_capacity), 64, 14));
  for (auto _ : state) benchmark::DoNotOptimize(context::refine_wide(z, bank, cfg, p));
}
BENCHMARK(BM_RefineWide)->Unit(benchmark::kMicrosecond);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0, 1);
  eval::ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(u(rng));
    s.labels.push_back(static_cast<std::uint8_t>(i % 2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::auroc(s));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(4)->Range(128, 1 << 18)->Complexity();

}  // namespace

BENCHMARK_MAIN();

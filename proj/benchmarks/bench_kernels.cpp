// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <cstdint>

#include "ssdlab/clustering.hpp"
#include "ssdlab/ffn.hpp"
#include "ssdlab/model.hpp"
#include "ssdlab/moe.hpp"

namespace {

using namespace ssdlab;

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

FFNWeights random_ffn(std::size_t d, std::size_t d_ff, Rng& rng) {
  FFNWeights w = FFNWeights::zeros(d, d_ff);
  w.w_in = gaussian(d_ff, d, rng, 0.05);
  w.w_out = gaussian(d, d_ff, rng, 0.05);
  return w;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = gaussian(n, n, rng), b = gaussian(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_DenseFFNForward(benchmark::State& state) {
  Rng rng(2);
  const FFNWeights w = random_ffn(96, 768, rng);
  const Matrix x = gaussian(256, 96, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ffn_forward(w, x));
}
BENCHMARK(BM_DenseFFNForward);

// Top-K of 32 experts over the same FFN; compare with BM_DenseFFNForward.
void BM_SMoEForward(benchmark::State& state) {
  Rng rng(2);
  const FFNWeights w = random_ffn(96, 768, rng);
  const Matrix x = gaussian(256, 96, rng);
  const SMoEFFN m = split_ffn(w, Partition::random_balanced(768, 32, rng), static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(smoe_forward(m, x));
}
BENCHMARK(BM_SMoEForward)->Arg(2)->Arg(6)->Arg(32);

void BM_BalancedKMeans(benchmark::State& state) {
  Rng data(3);
  const Matrix points = gaussian(static_cast<std::size_t>(state.range(0)), 96, data);
  for (auto _ : state) {
    Rng rng(4);
    benchmark::DoNotOptimize(balanced_kmeans(points, 32, std::nullopt, rng));
  }
}
BENCHMARK(BM_BalancedKMeans)->Arg(384)->Arg(768)->Unit(benchmark::kMillisecond);

void BM_LossAndGradient(benchmark::State& state) {
  ModelConfig c = ModelConfig::toy();
  Rng rng(5);
  const Model m = Model::init(c, rng);
  TokenBatch b{4, 32, {}};
  for (std::size_t i = 0; i < b.batch * b.length; ++i) b.ids.push_back(static_cast<std::int32_t>(rng.index(c.vocab_size)));
  for (auto _ : state) benchmark::DoNotOptimize(lm_loss(m, b));
}
BENCHMARK(BM_LossAndGradient)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

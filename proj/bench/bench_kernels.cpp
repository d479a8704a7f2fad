// Parallel kernels against the serial reference at toy and full-scale sizes.
#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "waiverlab/attention.hpp"
#include "waiverlab/reference.hpp"
#include "waiverlab/tensor.hpp"
#include "waiverlab/transformer.hpp"

using namespace waiverlab;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  Tensor t({r, c});
  for (float& x : t.data()) x = d(rng);
  return t;
}

void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

void BM_matmul_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(reference::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

void BM_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_matrix(n, n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(x));
}

void BM_softmax_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_matrix(n, n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(reference::softmax_rows(x));
}

void BM_attend(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor q = random_matrix(n, 64, 4), k = random_matrix(n, 64, 5), v = random_matrix(n, 64, 6);
  const MaskMatrix mask = build_causal_mask(n);
  for (auto _ : state) benchmark::DoNotOptimize(attend(q, k, v, mask, 0.125f));
}

void BM_attend_reference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor q = random_matrix(n, 64, 4), k = random_matrix(n, 64, 5), v = random_matrix(n, 64, 6);
  const MaskMatrix mask = build_causal_mask(n);
  for (auto _ : state) benchmark::DoNotOptimize(reference::attend(q, k, v, mask, 0.125f));
}

void BM_forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ModelWeights w = init_random_model(ModelConfig{});
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = (i * 37) % 256;
  const MaskMatrix mask = build_causal_mask(n);
  for (auto _ : state) benchmark::DoNotOptimize(forward(w, ids, mask, true));
}

}  // namespace

BENCHMARK(BM_matmul)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_matmul_reference)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_softmax)->Arg(64)->Arg(512);
BENCHMARK(BM_softmax_reference)->Arg(64)->Arg(512);
BENCHMARK(BM_attend)->Arg(64)->Arg(512);
BENCHMARK(BM_attend_reference)->Arg(64)->Arg(512);
BENCHMARK(BM_forward)->Arg(64)->Arg(512);

BENCHMARK_MAIN();

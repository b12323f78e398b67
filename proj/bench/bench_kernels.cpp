// Serial reference vs OpenMP kernels at the shapes GPT-2 small runs:
// a 15-token prompt through the attention/MLP projections and the
// full-vocabulary unembedding, plus one forward pass of a tiny model.
#include <benchmark/benchmark.h>

#include <vector>

#include "circuitbench/kernels.hpp"
#include "circuitbench/model.hpp"
#include "circuitbench/rng.hpp"
#include "circuitbench/runtime.hpp"

namespace {

using namespace circuitbench;

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = rng.uniform(-1.0f, 1.0f);
  return v;
}

template <bool Parallel>
void bm_gemm_nn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_vector(m * k, 1), b = random_vector(k * n, 2), bias = random_vector(n, 3);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm_nn(a.data(), b.data(), bias.data(), c.data(), m, k, n);
    } else {
      kernels::serial::gemm_nn(a.data(), b.data(), bias.data(), c.data(), m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

template <bool Parallel>
void bm_gemm_nt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_vector(m * k, 4), b = random_vector(n * k, 5);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm_nt(a.data(), b.data(), nullptr, c.data(), m, k, n);
    } else {
      kernels::serial::gemm_nt(a.data(), b.data(), nullptr, c.data(), m, k, n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

void gpt2_shapes(benchmark::internal::Benchmark* b) {
  b->Args({15, 768, 2304})   // qkv projection
      ->Args({15, 768, 3072})  // MLP in
      ->Args({15, 3072, 768})  // MLP out
      ->Args({64, 768, 1024}); // SAE encoder batch
}

void bm_forward_tiny(benchmark::State& state) {
  ModelConfig config;
  config.n_layer = 4;
  config.n_head = 4;
  config.d_model = 64;
  config.d_vocab = 512;
  config.n_ctx = 32;
  const auto weights = random_weights(config, 9);
  std::vector<TokenId> tokens(15);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<TokenId>(i * 31 % 512);
  ForwardOptions opt;
  opt.logits = LogitMode::last_position;
  for (auto _ : state) {
    auto r = run_forward(weights, tokens, opt);
    benchmark::DoNotOptimize(r.logits.data().data());
  }
}

BENCHMARK(bm_gemm_nn<false>)->Name("gemm_nn/serial")->Apply(gpt2_shapes)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_gemm_nn<true>)->Name("gemm_nn/parallel")->Apply(gpt2_shapes)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_gemm_nt<false>)->Name("gemm_nt/serial")->Args({1, 768, 50257})->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_gemm_nt<true>)->Name("gemm_nt/parallel")->Args({1, 768, 50257})->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_forward_tiny)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "mmate/bench/bench.hpp"
#include "mmate/flex_ma/flex_ma.hpp"
#include "mmate/local_swin/local_swin.hpp"
#include "mmate/model/attention.hpp"
#include "mmate/model/model.hpp"
#include "mmate/numerics/random.hpp"
#include "mmate/numerics/tape.hpp"

using namespace mmate;

namespace {

constexpr std::size_t kD = 64;
constexpr std::size_t kHeads = 4;
constexpr std::size_t kState = 16;

flex::ScanTensors scan_inputs(std::size_t n) {
  num::Rng rng = num::Rng::derive(0, 1);
  flex::ScanTensors in;
  in.heads = kHeads;
  in.decay = num::rand_uniform({n, kHeads}, rng, 0.8, 0.999);
  in.b = num::randn({n, kHeads * kState}, rng);
  in.c = num::randn({n, kHeads * kState}, rng);
  in.x = num::randn({n, kD}, rng);
  return in;
}

TokenSequence random_sequence(const GridShape& shape) {
  num::Rng rng = num::Rng::derive(0, 2);
  return {num::Var(num::randn({shape.total_tokens(), kD}, rng)), shape, std::nullopt};
}

void set_items(benchmark::State& state, std::size_t n) {
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

}  // namespace

static void BM_ScanChunked(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto in = scan_inputs(n);
  for (auto _ : state) benchmark::DoNotOptimize(flex::scan_chunked(in, flex::ScanDirection::kForward, 64));
  set_items(state, n);
}
BENCHMARK(BM_ScanChunked)->RangeMultiplier(4)->Range(256, 16384)->Unit(benchmark::kMillisecond);

static void BM_ScanNaive(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto in = scan_inputs(n);
  for (auto _ : state) benchmark::DoNotOptimize(flex::scan_naive(in, flex::ScanDirection::kForward));
  set_items(state, n);
}
BENCHMARK(BM_ScanNaive)->RangeMultiplier(4)->Range(256, 16384)->Unit(benchmark::kMillisecond);

static void BM_LocalSwin(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  const GridShape shape{frames, 8, 8, 0, false};
  num::Rng rng = num::Rng::derive(0, 3);
  const auto params = swin::init_swin(kD, kHeads, rng);
  const auto seq = random_sequence(shape);
  num::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(swin::local_swin_forward(seq, 0, params, {}));
  set_items(state, shape.total_tokens());
}
BENCHMARK(BM_LocalSwin)->RangeMultiplier(4)->Range(4, 256)->Unit(benchmark::kMillisecond);

static void BM_CausalAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  num::Rng rng = num::Rng::derive(0, 4);
  const auto params = model::init_attention(kD, rng);
  const auto seq = random_sequence(GridShape::text(n));
  num::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model::attention_forward(seq.embeddings, params, kHeads));
  set_items(state, n);
}
BENCHMARK(BM_CausalAttention)->RangeMultiplier(4)->Range(256, 4096)->Unit(benchmark::kMillisecond);

static void BM_FlexMA(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  const GridShape shape{frames, 8, 8, 0, false};
  num::Rng rng = num::Rng::derive(0, 5);
  const auto params = flex::init_flex_ma(kD, kHeads, kState, rng);
  const auto seq = random_sequence(shape);
  num::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(flex::flex_ma_forward(seq, 0, params));
  set_items(state, shape.total_tokens());
}
BENCHMARK(BM_FlexMA)->RangeMultiplier(4)->Range(4, 256)->Unit(benchmark::kMillisecond);

static void BM_Prefill(benchmark::State& state) {
  const auto kind = state.range(0) == 0 ? bench::Kind::kAttention : bench::Kind::kMMate;
  const auto n = static_cast<std::size_t>(state.range(1));
  bench::BenchConfig config;
  const auto m = bench::bench_model(kind, config);
  const auto shape = bench::bench_shape(n, config);
  std::vector<int> ids(n, 1);
  const auto seq = model::token_sequence(ids, shape);
  num::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model::model_forward(m, seq));
  state.SetLabel(std::string(bench::kind_name(kind)));
  set_items(state, n);
}
BENCHMARK(BM_Prefill)
    ->ArgsProduct({{0, 1}, {1024, 4096}})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <random>

#include "hgformer/bench.hpp"
#include "hgformer/hypergraph.hpp"
#include "hgformer/model.hpp"
#include "hgformer/ops.hpp"

namespace {

using hgformer::Tensor;

hgformer::TokenSet<float> random_tokens(std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n * c);
  for (auto& x : v) x = d(rng);
  hgformer::TokenSet<float> t;
  t.nodes = Tensor<float>({n, c}, std::move(v));
  t.class_token = hgformer::ops::mean_rows(t.nodes);
  t.grid = {1, n};
  return t;
}

void BM_CsKnn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto tokens = random_tokens(n, 64, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hgformer::cs_knn(tokens, n / 8, std::min<std::size_t>(32, n)));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CsKnn)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

void BM_Construction(benchmark::State& state) {
  const auto algo = static_cast<hgformer::ConstructionAlgo>(state.range(0));
  const auto tokens = random_tokens(256, 32, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hgformer::baseline_construct(tokens, algo, 32, 16, 0));
  }
  state.SetLabel(std::string(hgformer::to_string(algo)));
}
BENCHMARK(BM_Construction)->DenseRange(0, 3);

void BM_HgaBlock(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(hgformer::measure_block(n, c, std::max<std::size_t>(1, n / 8), std::min<std::size_t>(32, n)));
  }
}
BENCHMARK(BM_HgaBlock)->ArgsProduct({{64, 256}, {32, 64}});

void BM_MicroForward(benchmark::State& state) {
  const hgformer::Model<float> model(hgformer::variant_config("Micro", 4), 0);
  const auto size = static_cast<std::size_t>(state.range(0));
  std::vector<float> px(3 * size * size, 0.25f);
  const Tensor<float> image({3, size, size}, std::move(px));
  for (auto _ : state) benchmark::DoNotOptimize(hgformer::network_forward(image, model));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MicroForward)->Arg(32)->Arg(64);

void BM_MicroTrainStep(benchmark::State& state) {
  const hgformer::Model<float> model(hgformer::variant_config("Micro", 4), 0);
  std::vector<float> px(3 * 32 * 32, 0.25f);
  const Tensor<float> image({3, 32, 32}, std::move(px));
  for (auto _ : state) {
    hgformer::Tape<float> tape;
    hgformer::TapeScope<float> scope(tape);
    const auto loss = hgformer::ops::cross_entropy(hgformer::network_forward(image, model), 1);
    tape.backward(loss, false);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MicroTrainStep);

}  // namespace

BENCHMARK_MAIN();

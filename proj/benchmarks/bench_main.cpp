// Throughput of the kernels that dominate training and inference.
//
//   ./fer_benchmarks --benchmark_filter=Inference

#include <benchmark/benchmark.h>

#include <vector>

#include "fer/eval.hpp"
#include "fer/gemm.hpp"
#include "fer/layers.hpp"
#include "fer/model.hpp"
#include "fer/rng.hpp"

namespace {

using namespace fer;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(-1, 1));
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
             k = static_cast<std::size_t>(state.range(2));
  const Tensor a = random_tensor({m, k}, 1), b = random_tensor({k, n}, 2);
  std::vector<Scalar> c(m * n);
  for (auto _ : state) {
    gemm(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * m * n * k * static_cast<double>(state.iterations()), benchmark::Counter::kIsRate,
                         benchmark::Counter::kIs1000);
}
// Shapes of the five-layer network's im2col products (one image) and its
// 2304 -> 1024 dense layer at batch 128.
BENCHMARK(BM_Gemm)->Args({32, 2304, 25})->Args({32, 576, 512})->Args({64, 144, 800})->Args({128, 1024, 2304})
    ->Args({256, 256, 256});

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1)),
             f = static_cast<std::size_t>(state.range(2)), k = static_cast<std::size_t>(state.range(3));
  const Tensor x = random_tensor({8, c, hw, hw}, 3), w = random_tensor({f, c, k, k}, 4), b = random_tensor({f}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, Padding::kSame, 1));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 8);
}
BENCHMARK(BM_Conv2d)->Args({1, 48, 32, 5})->Args({32, 24, 32, 4})->Args({32, 12, 64, 5});

void BM_Conv2dBackward(benchmark::State& state) {
  const Tensor x = random_tensor({8, 32, 24, 24}, 6), w = random_tensor({32, 32, 4, 4}, 7);
  const Tensor up = random_tensor({8, 32, 24, 24}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(x, w, Padding::kSame, 1, up));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 8);
}
BENCHMARK(BM_Conv2dBackward);

void BM_InferenceSingleImage(benchmark::State& state) {
  const ModelGraph model = ModelGraph::build(state.range(0) ? Arch::kBaseline : Arch::kFiveLayer, 1);
  const Tensor x = random_tensor({1, 1, 48, 48}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
  state.SetLabel(state.range(0) ? "baseline" : "five-layer");
}
BENCHMARK(BM_InferenceSingleImage)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_InferenceTta(benchmark::State& state) {
  const ModelGraph model = ModelGraph::build(Arch::kFiveLayer, 1);
  Rng rng(10);
  GrayImage g(48, 48);
  for (auto& v : g.values) v = static_cast<Scalar>(rng.uniform());
  for (auto _ : state) benchmark::DoNotOptimize(predict_tta(model, g, AugmentPolicy{}, 0));
}
BENCHMARK(BM_InferenceTta)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelGraph model = ModelGraph::build(Arch::kFiveLayer, 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({batch, 1, 48, 48}, 11);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % kNumClasses);
  for (auto _ : state) {
    Tape tape;
    const Tensor logits = model.logits(x, Mode::kTrain, 1, &tape);
    const auto ce = softmax_cross_entropy(logits, labels);
    benchmark::DoNotOptimize(model.backward(tape, ce.logits_grad));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

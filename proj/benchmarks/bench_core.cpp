#include <benchmark/benchmark.h>

#include "coronagan/dataset.hpp"
#include "coronagan/evaluation.hpp"
#include "coronagan/phantom.hpp"
#include "coronagan/training.hpp"

using namespace coronagan;

namespace {

template <class T>
Tensor<T> noise(Shape4 s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, 0, 1));
  return t;
}

// args: channels in/out, spatial size, stride
void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int size = static_cast<int>(state.range(1));
  const int stride = static_cast<int>(state.range(2));
  const auto x = noise<float>({8, c, size, size}, 1);
  const auto w = noise<float>({c, c, 3, 3}, 2);
  const Tensor<float> b(1, c, 1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::conv2d(x, w, &b, stride, 1));
  }
  const double out = static_cast<double>(size / stride) * (size / stride);
  state.counters["GFLOP"] = benchmark::Counter(2.0 * 8 * c * c * 9 * out * state.iterations() / 1e9,
                                                 benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 64, 1})->Args({32, 32, 2})->Args({64, 16, 1})->Args({64, 72, 1});

void BM_GeneratorForward(benchmark::State& state) {
  net::Generator<float> g(net::GeneratorConfig{1, 3, static_cast<int>(state.range(0)), 5, 3});
  g.init(3);
  const int size = static_cast<int>(state.range(1));
  const auto x = noise<float>({1, 1, size, size}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(g.forward(x));
}
BENCHMARK(BM_GeneratorForward)->Args({8, 64})->Args({8, 288})->Args({64, 288})->Unit(benchmark::kMillisecond);

void BM_GeneratorBackward(benchmark::State& state) {
  net::Generator<float> g(net::GeneratorConfig{1, 3, 8, 5, 3});
  g.init(3);
  const auto x = noise<float>({8, 1, 64, 64}, 5);
  net::Generator<float>::Trace trace;
  const auto out = g.forward(x, &trace);
  const auto grad = noise<float>(out.image.shape(), 6);
  nn::Grads<float> grads(g.params());
  for (auto _ : state) {
    grads.zero();
    benchmark::DoNotOptimize(g.backward(trace, &grad, nullptr, &grads, false));
  }
}
BENCHMARK(BM_GeneratorBackward)->Unit(benchmark::kMillisecond);

// One update at the smoke-training scale: 64x64 patches, base width 8, batch 8.
void BM_TrainStep(benchmark::State& state) {
  train::TrainingConfig cfg;
  cfg.batch_size = 8;
  phantom::PhantomDistribution dist;
  std::vector<data::Patch> oct, hist;
  for (int i = 0; i < 8; ++i) {
    oct.push_back(data::extract_patches(phantom::make_sample(phantom::random_spec(dist, i), Domain::kOct), 64)[0]);
    hist.push_back(data::extract_patches(
        phantom::make_sample(phantom::random_spec(dist, 50 + i), Domain::kHistology), 64)[0]);
  }
  const data::UnpairedLoader loader(std::move(oct), std::move(hist), {64, 8, 0.5, 0});
  const auto batch = loader.batch(0, 0);
  auto s = train::initial_state(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(train::train_step(s, batch, 1e-4, 0, 0));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_PooledFeatures(benchmark::State& state) {
  const eval::FallbackExtractor ex;
  const auto img = noise<float>({1, 3, 288, 288}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(eval::pooled_all(ex, img));
}
BENCHMARK(BM_PooledFeatures)->Unit(benchmark::kMillisecond);

void BM_RenderPhantom(benchmark::State& state) {
  phantom::PhantomDistribution dist;
  dist.height = dist.width = static_cast<int>(state.range(0));
  const auto spec = phantom::random_spec(dist, 9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(phantom::make_sample(spec, Domain::kOct));
    benchmark::DoNotOptimize(phantom::make_sample(spec, Domain::kHistology));
  }
}
BENCHMARK(BM_RenderPhantom)->Arg(64)->Arg(288);

}  // namespace

BENCHMARK_MAIN();

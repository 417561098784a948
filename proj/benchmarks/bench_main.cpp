#include <benchmark/benchmark.h>

#include "depthref/autodiff.hpp"
#include "depthref/refine.hpp"
#include "depthref/rng.hpp"
#include "depthref/scenegen.hpp"
#include "depthref/stereo_baseline.hpp"

namespace {

using depthref::ad::Tape;
using depthref::ad::Tensor;

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  depthref::Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({1, c, 96, 192}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) {
    Tape tape;
    const auto out = tape.conv2d(tape.constant(x), tape.constant(w), std::nullopt, 1, 1);
    benchmark::DoNotOptimize(tape.value(out).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * 9 * c * c * 96 * 192));
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({1, c, 96, 192}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) {
    Tape tape;
    const auto xv = tape.parameter(0, x);
    const auto wv = tape.parameter(1, w);
    const auto out = tape.conv2d(xv, wv, std::nullopt, 1, 1);
    const auto loss = tape.mean_abs(out, std::vector<std::uint8_t>(tape.value(out).numel(), 1));
    benchmark::DoNotOptimize(tape.backward(loss, 2));
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_UNetTrainStep(benchmark::State& state) {
  const auto net = depthref::build_unet({}, 0);
  const Tensor input = random_tensor({1, 3, 96, 192}, 3);
  const std::vector<std::uint8_t> mask(96 * 192, 1);
  for (auto _ : state) {
    Tape tape;
    const auto params = net.register_params(tape);
    const auto f = net.forward(tape, tape.constant(input), params);
    const auto loss = tape.mean_abs(f, mask);
    benchmark::DoNotOptimize(tape.backward(loss, params.size()));
  }
}
BENCHMARK(BM_UNetTrainStep)->Unit(benchmark::kMillisecond);

void BM_UNetInfer(benchmark::State& state) {
  const auto net = depthref::build_unet({}, 0);
  const Tensor input = random_tensor({1, 3, 96, 192}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(net.infer(input));
}
BENCHMARK(BM_UNetInfer)->Unit(benchmark::kMillisecond);

void BM_GenerateScene(benchmark::State& state) {
  depthref::SceneSpec spec;
  for (auto _ : state) {
    benchmark::DoNotOptimize(depthref::generate_scene(spec));
    ++spec.seed;
  }
}
BENCHMARK(BM_GenerateScene)->Unit(benchmark::kMillisecond);

void BM_ComputeDisparity(benchmark::State& state) {
  const auto sample = depthref::generate_scene({});
  depthref::MatchParams params;
  params.d_max = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(depthref::compute_disparity(sample.left, sample.right, params));
}
BENCHMARK(BM_ComputeDisparity)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

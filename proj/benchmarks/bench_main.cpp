#include <benchmark/benchmark.h>

#include <optional>

#include "zestdiff/checkpoint.hpp"
#include "zestdiff/harness.hpp"
#include "zestdiff/ops.hpp"
#include "zestdiff/rng.hpp"
#include "zestdiff/sampler.hpp"

using namespace zestdiff;

namespace {

// Untrained weights with the default 32 px layout; timing does not depend on them.
const Denoiser<float>& model() {
  static const Denoiser<float> m(Checkpoint::initial(DenoiserConfig{}, make_schedule(1000, ScheduleKind::linear_beta), 1));
  return m;
}

const Scene& scene() {
  static const Scene s = scene_for_index(1, 2);
  return s;
}

TensorF noise(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_tensor<float>(std::move(shape));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = state.range(0);
  const auto a = noise({n, n}, 1), b = noise({n, n}, 2);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Conv3x3(benchmark::State& state) {
  const auto c = state.range(0);
  const auto x = noise({1, c, 32, 32}, 3), w = noise({c, c, 3, 3}, 4), bias = noise({c}, 5);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, bias, 1, 1));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32);

void BM_UNetForward(benchmark::State& state) {
  const bool capture = state.range(0) != 0;
  const auto x = noise({1, 3, 32, 32}, 6);
  const auto prompt = scene().caption(model().vocab());
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model().predict_noise(x, 500, prompt, capture));
}
BENCHMARK(BM_UNetForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Forward with capture, segment loss and backward to the input: the extra
// work of one guided step.
void BM_GuidedGradient(benchmark::State& state) {
  const auto prompt = scene().caption(model().vocab());
  const auto seg = segments_for_scene(scene(), 16);
  for (auto _ : state) {
    auto x = noise({1, 3, 32, 32}, 7);
    x.set_requires_grad(true);
    auto pred = model().predict_noise(x, 500, prompt, true);
    auto est = segment_estimates(pred.records, seg, Averaging::global, LayerFilter::res_both);
    backward(zest_loss(est, seg, LossMode::combined).total);
    benchmark::DoNotOptimize(x.grad());
  }
}
BENCHMARK(BM_GuidedGradient)->Unit(benchmark::kMillisecond);

void BM_SegmentEstimates(benchmark::State& state) {
  const auto prompt = scene().caption(model().vocab());
  const auto seg = segments_for_scene(scene(), 16);
  NoGradGuard no_grad;
  const auto pred = model().predict_noise(noise({1, 3, 32, 32}, 8), 500, prompt, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(segment_estimates(pred.records, seg, Averaging::global, LayerFilter::res_both));
  }
}
BENCHMARK(BM_SegmentEstimates)->Unit(benchmark::kMicrosecond);

// Full 50-step samples: unguided, PwW, guided at tau = 0.5.
void BM_Sample(benchmark::State& state) {
  const auto method = static_cast<Method>(state.range(0));
  const auto prompt = scene().caption(model().vocab());
  std::optional<SegmentSpec> seg;
  if (method_uses_segments(method)) seg = segments_for_scene(scene(), 16);
  const auto g = method_config(method);
  SamplerConfig s;
  s.seed = 9;
  for (auto _ : state) benchmark::DoNotOptimize(sample(model(), prompt, seg, g, s));
  state.SetLabel(method_name(method));
}
BENCHMARK(BM_Sample)
    ->Arg(static_cast<int>(Method::none))
    ->Arg(static_cast<int>(Method::pww))
    ->Arg(static_cast<int>(Method::zest))
    ->Unit(benchmark::kMillisecond);

void BM_OracleScore(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(score_image(scene().image, scene()));
}
BENCHMARK(BM_OracleScore)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

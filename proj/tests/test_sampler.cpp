#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "zestdiff/checkpoint.hpp"
#include "zestdiff/gradcheck.hpp"
#include "zestdiff/sampler.hpp"

using namespace zestdiff;
using zdtest::rand_d;
using zdtest::values;

namespace {

NoiseSchedule two_point_schedule(double a_t, double a_prev) {
  NoiseSchedule s = make_schedule(10, ScheduleKind::linear_beta);
  auto set = [&](int t, double a) {
    s.alpha[static_cast<size_t>(t)] = a;
    s.sqrt_alpha[static_cast<size_t>(t)] = std::sqrt(a);
    s.sqrt_one_minus_alpha[static_cast<size_t>(t)] = std::sqrt(1.0 - a);
  };
  set(5, a_t);
  set(3, a_prev);
  return s;
}

// Random-weight model with the shipped 32 px layout, narrow channels.
class SamplerRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto schedule = make_schedule(1000, ScheduleKind::linear_beta);
    model_ = new Denoiser<float>(Checkpoint::initial(zdtest::small_config(), schedule, 5));
    scene_ = new Scene(scene_for_index(3, 4));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete scene_;
  }

  static PromptSpec prompt() { return scene_->caption(model_->vocab()); }
  static SegmentSpec segments() { return segments_for_scene(*scene_, 16); }
  static SamplerConfig sampler(int steps = 20) {
    SamplerConfig s;
    s.steps = steps;
    s.seed = 77;
    return s;
  }

  static Denoiser<float>* model_;
  static Scene* scene_;
};

Denoiser<float>* SamplerRun::model_ = nullptr;
Scene* SamplerRun::scene_ = nullptr;

}  // namespace

TEST(DdimStep, ZeroNoiseCollapses) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto x = rand_d({1, 3, 4, 4}, 1);
  auto out = values(ddim_step(x, TensorD::zeros(x.shape()), 600, 400, s));
  const double k = std::sqrt(s.alpha[400] / s.alpha[600]);
  const auto in = values(x);
  for (size_t i = 0; i < in.size(); ++i) EXPECT_NEAR(out[i], k * in[i], 1e-12);
}

TEST(DdimStep, ExactPredictionConsistency) {
  const auto s = make_schedule(1000, ScheduleKind::cosine);
  auto x0 = rand_d({1, 3, 4, 4}, 2);
  auto eps = rand_d({1, 3, 4, 4}, 3);
  for (auto [t, tp] : {std::pair{900, 880}, std::pair{500, 100}, std::pair{20, 0}}) {
    zdtest::expect_all_near(values(ddim_step(add_noise(x0, t, eps, s), eps, t, tp, s)),
                            values(add_noise(x0, tp, eps, s)), 1e-9);
  }
}

TEST(DdimStep, ScalarHandCase) {
  const auto s = two_point_schedule(0.25, 0.81);
  const double x_t = 0.5 * 2.0 + std::sqrt(0.75);  // 1.8660...
  auto out = ddim_step(TensorD::from_data({1}, {x_t}), TensorD::from_data({1}, {1.0}), 5, 3, s);
  EXPECT_NEAR(out.item(), 2.23589, 5e-6);
}

TEST(DdimStep, RejectsBadOrder) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto x = TensorD::zeros({1, 3, 2, 2});
  EXPECT_THROW(ddim_step(x, x, 10, 10, s), std::invalid_argument);
  EXPECT_THROW(ddim_step(x, x, 10, 20, s), std::invalid_argument);
  EXPECT_THROW(ddim_step(x, TensorD::zeros({1, 3, 2, 3}), 20, 10, s), std::invalid_argument);
}

TEST(ClipNoise, ConsistentWithClampedPrediction) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto x0 = rand_d({1, 3, 4, 4}, 4, -0.9, 0.9);
  auto eps = rand_d({1, 3, 4, 4}, 5);
  const int t = 700;
  auto x_t = add_noise(x0, t, eps, s);
  // In-range prediction: unchanged.
  zdtest::expect_all_near(values(clip_noise(x_t, eps, t, s)), values(eps), 1e-9);
  // Out-of-range prediction: the implied x0 is the clamped one.
  auto big = add_noise(mul_scalar(x0, 5.0), t, eps, s);
  auto fixed = clip_noise(big, eps, t, s);
  auto implied = values(mul_scalar(sub(big, mul_scalar(fixed, s.sqrt_one_minus_alpha[t])), 1.0 / s.sqrt_alpha[t]));
  const auto raw = values(x0);
  for (size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(implied[i], std::clamp(5.0 * raw[i], -1.0, 1.0), 1e-9);
  EXPECT_THROW(clip_noise(x_t, eps, 0, s), std::invalid_argument);
}

TEST(CfgNoise, Oracles) {
  auto c = rand_d({2, 3}, 6), u = rand_d({2, 3}, 7);
  zdtest::expect_all_near(values(cfg_noise(c, u, 1.0)), values(c), 1e-15);
  zdtest::expect_all_near(values(cfg_noise(c, u, 0.0)), values(u), 1e-15);
  EXPECT_DOUBLE_EQ(cfg_noise(TensorD::from_data({1}, {1.0}), TensorD::from_data({1}, {0.0}), 3.0).item(), 3.0);
  EXPECT_THROW(cfg_noise(c, TensorD::zeros({3, 2}), 3.0), std::invalid_argument);
}

TEST(Timesteps, UniformStrideEndpoints) {
  const auto ts = ddim_timesteps(1000, 50);
  ASSERT_EQ(ts.size(), 50u);
  EXPECT_EQ(ts.front(), 1);
  EXPECT_EQ(ts.back(), 1000);
  for (size_t i = 1; i < ts.size(); ++i) EXPECT_GT(ts[i], ts[i - 1]);
  EXPECT_EQ(ddim_timesteps(10, 10), (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  EXPECT_THROW(ddim_timesteps(1000, 1), std::invalid_argument);
  EXPECT_THROW(ddim_timesteps(10, 11), std::invalid_argument);
}

TEST(Timesteps, GuidedStepCount) {
  EXPECT_EQ(guided_step_count(0.0, 50), 0);
  EXPECT_EQ(guided_step_count(0.5, 50), 25);
  EXPECT_EQ(guided_step_count(0.1, 50), 5);
  EXPECT_EQ(guided_step_count(0.25, 50), 13);
  EXPECT_EQ(guided_step_count(1.0, 50), 50);
  EXPECT_EQ(guided_step_count(0.01, 50), 1);
}

TEST_F(SamplerRun, SameSeedBitIdentical) {
  GuidanceConfig g;
  g.pww_weight = 0.5;
  const auto a = sample(*model_, prompt(), segments(), g, sampler());
  const auto b = sample(*model_, prompt(), segments(), g, sampler());
  EXPECT_EQ(a.image.pixels, b.image.pixels);
  EXPECT_EQ(values(a.x0), values(b.x0));
  auto other = sampler();
  other.seed = 78;
  EXPECT_NE(sample(*model_, prompt(), segments(), g, other).image.pixels, a.image.pixels);
}

TEST_F(SamplerRun, TauZeroEqualsNoSegments) {
  GuidanceConfig g;
  g.tau = 0.0;
  const auto gated = sample(*model_, prompt(), segments(), g, sampler());
  const auto plain = sample(*model_, prompt(), std::nullopt, g, sampler());
  EXPECT_EQ(values(gated.x0), values(plain.x0));
  EXPECT_EQ(gated.trace.backward_passes, 0);
}

TEST_F(SamplerRun, EtaZeroEqualsNoSegments) {
  GuidanceConfig g;
  g.eta = 0.0;
  const auto inert = sample(*model_, prompt(), segments(), g, sampler());
  g.eta = 5.0;  // irrelevant without segments
  const auto plain = sample(*model_, prompt(), std::nullopt, g, sampler());
  EXPECT_EQ(values(inert.x0), values(plain.x0));
}

TEST_F(SamplerRun, GuidanceChangesTheSample) {
  GuidanceConfig g;
  const auto guided = sample(*model_, prompt(), segments(), g, sampler());
  const auto plain = sample(*model_, prompt(), std::nullopt, g, sampler());
  EXPECT_NE(values(guided.x0), values(plain.x0));
  g.update_target = UpdateTarget::sample;
  const auto on_sample = sample(*model_, prompt(), segments(), g, sampler());
  EXPECT_NE(values(on_sample.x0), values(plain.x0));
  EXPECT_NE(values(on_sample.x0), values(guided.x0));
  g.eta = 0.0;
  EXPECT_EQ(values(sample(*model_, prompt(), segments(), g, sampler()).x0), values(plain.x0));
}

TEST_F(SamplerRun, PassCounts) {
  for (double tau : {0.1, 0.5, 1.0}) {
    GuidanceConfig g;
    g.tau = tau;
    const auto r = sample(*model_, prompt(), segments(), g, sampler(20));
    EXPECT_EQ(r.trace.conditional_passes, 20);
    EXPECT_EQ(r.trace.unconditional_passes, 20);
    EXPECT_EQ(r.trace.backward_passes, guided_step_count(tau, 20));
    int guided = 0;
    for (const auto& e : r.trace.entries) guided += e.guided ? 1 : 0;
    EXPECT_EQ(guided, guided_step_count(tau, 20));
    for (size_t i = 0; i < r.trace.entries.size(); ++i) EXPECT_EQ(r.trace.entries[i].guided, i < static_cast<size_t>(guided));
  }
}

TEST_F(SamplerRun, TraceHasOneEntryPerStep) {
  GuidanceConfig g;
  SampleOptions opts;
  opts.trace = true;
  opts.keep_x = true;
  const auto r = sample(*model_, prompt(), segments(), g, sampler(50), opts);
  ASSERT_EQ(r.trace.entries.size(), 50u);
  EXPECT_EQ(r.trace.x_snapshots.size(), 50u);
  EXPECT_EQ(r.trace.step_ms.size(), 50u);
  for (size_t i = 0; i < 50; ++i) {
    const auto& e = r.trace.entries[i];
    EXPECT_EQ(e.step, static_cast<int>(i));
    if (i > 0) EXPECT_LT(e.t, r.trace.entries[i - 1].t);
    ASSERT_TRUE(e.estimates.defined());
    EXPECT_EQ(e.estimates.shape(), (Shape{static_cast<std::int64_t>(segments().size()), 16, 16}));
    for (float v : e.estimates.data()) {
      EXPECT_GE(v, -1e-5f);
      EXPECT_LE(v, 1.0f + 1e-5f);
    }
  }
  EXPECT_NO_THROW(attention_trace(r.trace.entries));
  EXPECT_THROW(sample(*model_, prompt(), std::nullopt, g, sampler(), opts), std::invalid_argument);
}

TEST_F(SamplerRun, GuidedTraceDivergesAfterFirstStep) {
  GuidanceConfig g;
  SampleOptions opts;
  opts.trace = true;
  const auto guided = sample(*model_, prompt(), segments(), g, sampler(), opts);
  g.eta = 0.0;
  const auto plain = sample(*model_, prompt(), segments(), g, sampler(), opts);
  EXPECT_EQ(values(guided.trace.entries[0].estimates), values(plain.trace.entries[0].estimates));
  EXPECT_EQ(guided.trace.entries[0].loss, plain.trace.entries[0].loss);
  EXPECT_NE(values(guided.trace.entries[1].estimates), values(plain.trace.entries[1].estimates));
}

TEST_F(SamplerRun, RejectsOutOfPromptTokens) {
  auto seg = segments();
  seg.token_sets[0] = {40};
  EXPECT_THROW(sample(*model_, prompt(), seg, GuidanceConfig{}, sampler()), std::invalid_argument);
  auto bad = sampler();
  bad.steps = 1;
  EXPECT_THROW(sample(*model_, prompt(), std::nullopt, GuidanceConfig{}, bad), std::invalid_argument);
}

// The segment loss differentiated through the whole denoiser, in double
// precision, against central differences.
TEST(EndToEndGradient, ZestLossThroughReducedUNet) {
  const auto cfg = zdtest::tiny_config();
  const auto schedule = make_schedule(1000, ScheduleKind::linear_beta);
  const Checkpoint ckpt = Checkpoint::initial(cfg, schedule, 9);
  std::int64_t weights = 0;
  for (const auto& [name, t] : ckpt.params) weights += t.numel();
  ASSERT_LE(weights, 20000);

  const Denoiser<double> model(ckpt);
  const PromptSpec prompt = PromptSpec::encode("a red circle and a blue square on gray background", model.vocab());
  SegmentSpec seg;
  seg.resolution = 8;
  BinaryMask left = BinaryMask::empty(8, 8), right = BinaryMask::empty(8, 8);
  for (int y = 1; y < 7; ++y)
    for (int x = 0; x < 4; ++x) {
      left.at(y, x) = 1;
      right.at(y, x + 4) = 1;
    }
  seg.masks = {left, right};
  seg.token_sets = {{1, 2}, {5, 6}};

  UNetForwardOptions<double> fwd;
  fwd.attention_bias = pww_bias_maps<double>(seg, model.attention_resolutions(), cfg.context_len, 0.3, 400, schedule);
  auto loss = [&](const TensorD& x) {
    auto pred = model.predict_noise(x, 400, prompt, true, fwd);
    auto est = segment_estimates(pred.records, seg, Averaging::global, LayerFilter::all);
    return zest_loss(est, seg, LossMode::combined).total;
  };
  const auto r = grad_check(loss, rand_d({1, 3, 8, 8}, 10), 1e-5);
  EXPECT_TRUE(r.ok(1e-3)) << "max rel err " << r.max_rel_err << " at " << r.worst_index << " " << r.message;
}

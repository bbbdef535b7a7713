#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "zestdiff/errors.hpp"
#include "zestdiff/guidance.hpp"
#include "zestdiff/sampler.hpp"

using namespace zestdiff;
using zdtest::rand_d;
using zdtest::values;

namespace {

// Schedule whose alpha at t = 1 is `a` (lambda(1) = sqrt(1 - a)).
NoiseSchedule schedule_at1(double a) {
  NoiseSchedule s = make_schedule(10, ScheduleKind::linear_beta);
  s.alpha[1] = a;
  s.sqrt_alpha[1] = std::sqrt(a);
  s.sqrt_one_minus_alpha[1] = std::sqrt(1.0 - a);
  return s;
}

BinaryMask mask(int res, std::vector<std::uint8_t> bits) {
  BinaryMask m = BinaryMask::empty(res, res);
  m.data = std::move(bits);
  return m;
}

SegmentEstimate<double> estimate(Shape shape, std::vector<double> v) {
  return {TensorD::from_data(std::move(shape), std::move(v))};
}

double bce(double p, double y) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

}  // namespace

TEST(ZestLoss, HalfAgainstOnesIsLn2) {
  auto est = estimate({1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
  auto loss = zest_loss(est, {mask(2, {1, 1, 1, 1})}, LossMode::combined);
  EXPECT_NEAR(loss.report.bce[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(loss.report.norm_bce[0], 0.0, 2e-6);
  EXPECT_NEAR(loss.report.total, 0.69315, 5e-6);
  EXPECT_NEAR(loss.total.item(), loss.report.total, 1e-12);
}

TEST(ZestLoss, ExactMatchNearZero) {
  auto est = estimate({2, 2, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
  auto loss = zest_loss(est, {mask(2, {1, 0, 0, 1}), mask(2, {0, 1, 1, 0})}, LossMode::combined);
  const double bound = 2.0 * std::log(1.0 / (1.0 - 1e-6));
  for (size_t i = 0; i < 2; ++i) EXPECT_LE(loss.report.bce[i] + loss.report.norm_bce[i], bound + 1e-12);
  EXPECT_GE(loss.report.total, 0.0);
}

TEST(ZestLoss, TwoByTwoHandCase) {
  const std::vector<double> s = {0.8, 0.2, 0.6, 0.4};
  const std::vector<double> y = {1, 0, 1, 0};
  double first = 0.0, second = 0.0;
  for (size_t i = 0; i < 4; ++i) {
    first += bce(s[i], y[i]) / 4.0;
    second += bce(s[i] / 0.8, y[i]) / 4.0;
  }
  auto est = estimate({1, 2, 2}, s);
  auto combined = zest_loss(est, {mask(2, {1, 0, 1, 0})}, LossMode::combined);
  EXPECT_NEAR(combined.report.bce[0], first, 1e-12);
  EXPECT_NEAR(combined.report.norm_bce[0], second, 1e-12);
  EXPECT_NEAR(combined.report.total, first + second, 1e-12);
  EXPECT_NEAR(combined.report.total, 0.684113, 1e-6);
  auto plain = zest_loss(est, {mask(2, {1, 0, 1, 0})}, LossMode::bce);
  EXPECT_NEAR(plain.report.total, first, 1e-12);
  EXPECT_EQ(plain.report.norm_bce[0], 0.0);
}

TEST(ZestLoss, TotalIsSumOfTermsAndCombinedDominates) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto est = SegmentEstimate<double>{rand_d({3, 4, 4}, seed, 0.0, 1.0)};
    Rng rng(seed + 100);
    std::vector<BinaryMask> masks;
    for (int k = 0; k < 3; ++k) {
      BinaryMask m = BinaryMask::empty(4, 4);
      for (auto& b : m.data) b = rng.uniform(0.0, 1.0) < 0.5 ? 1 : 0;
      masks.push_back(m);
    }
    auto c = zest_loss(est, masks, LossMode::combined);
    auto b = zest_loss(est, masks, LossMode::bce);
    double sum = 0.0;
    for (size_t k = 0; k < 3; ++k) sum += c.report.bce[k] + c.report.norm_bce[k];
    EXPECT_NEAR(c.report.total, sum, 1e-6);
    EXPECT_GE(c.report.total, b.report.total);
    EXPECT_GE(b.report.total, 0.0);
  }
}

TEST(ZestLoss, ResolutionMismatchRejected) {
  auto est = estimate({1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
  EXPECT_THROW(zest_loss(est, {BinaryMask::empty(4, 4)}, LossMode::bce), std::invalid_argument);
  EXPECT_THROW(zest_loss(est, {}, LossMode::bce), std::invalid_argument);
}

TEST(ZestLoss, GradientReachesEstimates) {
  auto maps = rand_d({1, 3, 3}, 5, 0.1, 0.9);
  maps.set_requires_grad(true);
  auto m = mask(3, {1, 1, 0, 0, 1, 0, 0, 0, 0});
  auto loss = zest_loss(SegmentEstimate<double>{maps}, {m}, LossMode::bce);
  backward(loss.total);
  const std::vector<double> g(maps.grad().begin(), maps.grad().end());
  for (size_t i = 0; i < 9; ++i) {
    if (m.data[i]) EXPECT_LT(g[i], 0.0);
    else EXPECT_GT(g[i], 0.0);
  }
}

TEST(Lambda, Oracles) {
  auto s = make_schedule(1000, ScheduleKind::linear_beta);
  EXPECT_EQ(lambda_schedule(0, s), 0.0);
  s.alpha[1000] = 1e-3;
  s.sqrt_alpha[1000] = std::sqrt(1e-3);
  s.sqrt_one_minus_alpha[1000] = std::sqrt(1.0 - 1e-3);
  EXPECT_NEAR(lambda_schedule(1000, s), 0.99950, 5e-6);
  const auto l = make_schedule(1000, ScheduleKind::linear_beta);
  const auto c = make_schedule(1000, ScheduleKind::cosine);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_GE(lambda_schedule(t, l), lambda_schedule(t - 1, l));
    EXPECT_GE(lambda_schedule(t, c), lambda_schedule(t - 1, c));
    EXPECT_LE(lambda_schedule(t, c), 1.0);
  }
}

TEST(Lambda, NoiseVarianceDecay) {
  const auto s = schedule_at1(1.0 - 0.64);
  EXPECT_NEAR(lambda_schedule(1, s, StepDecay::noise_std), 0.8, 1e-15);
  EXPECT_NEAR(lambda_schedule(1, s, StepDecay::noise_var), 0.64, 1e-15);
  const auto l = make_schedule(1000, ScheduleKind::linear_beta);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_LE(lambda_schedule(t, l, StepDecay::noise_var), lambda_schedule(t, l, StepDecay::noise_std));
  }
}

TEST(NormalizeGrad, Oracles) {
  auto g = TensorD::from_data({2}, {2, -4});
  zdtest::expect_all_near(values(normalize_grad(g, NormMode::linf)), {0.5, -1.0}, 1e-15);
  zdtest::expect_all_near(values(normalize_grad(g, NormMode::none)), {2.0, -4.0}, 0.0);
  zdtest::expect_all_near(values(normalize_grad(g, NormMode::l1)), {2.0 / 3.0, -4.0 / 3.0}, 1e-15);
  auto h = TensorD::from_data({2}, {3, 4});
  zdtest::expect_all_near(values(normalize_grad(h, NormMode::l2)), {0.84853, 1.13137}, 5e-6);
  for (auto mode : {NormMode::none, NormMode::l1, NormMode::l2, NormMode::linf}) {
    for (double v : values(normalize_grad(TensorD::zeros({3, 2}), mode))) EXPECT_EQ(v, 0.0);
  }
}

TEST(NormalizeGrad, ConstantMagnitudeSameStepAcrossModes) {
  auto g = TensorD::from_data({4}, {0.3, -0.3, 0.3, 0.3});
  for (auto mode : {NormMode::l1, NormMode::l2, NormMode::linf}) {
    for (double v : values(normalize_grad(g, mode))) EXPECT_NEAR(std::abs(v), 1.0, 1e-14);
  }
}

TEST(NormalizeGrad, NonFiniteRejected) {
  auto g = TensorD::from_data({2}, {1.0, std::nan("")});
  EXPECT_THROW(normalize_grad(g, NormMode::linf), NumericalError);
  auto h = TensorD::from_data({2}, {1.0, INFINITY});
  EXPECT_THROW(normalize_grad(h, NormMode::none), NumericalError);
}

TEST(GuidedUpdate, Oracles) {
  GuidanceConfig cfg;
  cfg.norm_mode = NormMode::linf;
  const auto s = schedule_at1(1.0 - 0.64);  // lambda = 0.8
  auto x = TensorD::from_data({2}, {1, 1});
  auto g = TensorD::from_data({2}, {2, -4});
  zdtest::expect_all_near(values(guided_update(x, g, 1, cfg, s)), {0.6, 1.8}, 1e-12);

  cfg.eta = 0.0;
  zdtest::expect_all_near(values(guided_update(x, g, 1, cfg, s)), {1.0, 1.0}, 0.0);

  cfg.eta = 1.0;
  const auto half = schedule_at1(0.75);  // lambda = 0.5
  auto xr = rand_d({2, 3}, 7);
  auto out = values(guided_update(xr, TensorD::full({2, 3}, 0.37), 1, cfg, half));
  const auto in = values(xr);
  for (size_t i = 0; i < in.size(); ++i) EXPECT_NEAR(in[i] - out[i], 0.5, 1e-12);
}

TEST(GuidedUpdate, ShapeMismatchRejected) {
  GuidanceConfig cfg;
  const auto s = make_schedule(10, ScheduleKind::linear_beta);
  EXPECT_THROW(guided_update(TensorD::zeros({2}), TensorD::zeros({3}), 5, cfg, s), std::invalid_argument);
}

TEST(GuidedUpdate, LinfStepBoundedByEtaLambda) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  GuidanceConfig cfg;
  cfg.eta = 0.7;
  for (int t : {1, 200, 999}) {
    auto x = rand_d({3, 4, 4}, static_cast<std::uint64_t>(t));
    auto g = rand_d({3, 4, 4}, static_cast<std::uint64_t>(t) + 1, -5, 5);
    auto out = values(guided_update(x, g, t, cfg, s));
    const auto in = values(x);
    double biggest = 0.0;
    for (size_t i = 0; i < in.size(); ++i) biggest = std::max(biggest, std::abs(out[i] - in[i]));
    EXPECT_LE(biggest, cfg.eta * lambda_schedule(t, s) + 1e-12);
    EXPECT_NEAR(biggest, cfg.eta * lambda_schedule(t, s), 1e-12);
  }
}

TEST(GuidedUpdate, ScaleInvariance) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto x = rand_d({2, 5}, 11);
  auto g = rand_d({2, 5}, 12);
  GuidanceConfig cfg;
  for (auto mode : {NormMode::l1, NormMode::l2, NormMode::linf}) {
    cfg.norm_mode = mode;
    zdtest::expect_all_near(values(guided_update(x, mul_scalar(g, 17.5), 500, cfg, s)),
                            values(guided_update(x, g, 500, cfg, s)), 1e-12);
  }
  cfg.norm_mode = NormMode::none;
  auto step1 = values(sub(x, guided_update(x, g, 500, cfg, s)));
  auto step2 = values(sub(x, guided_update(x, mul_scalar(g, 3.0), 500, cfg, s)));
  for (size_t i = 0; i < step1.size(); ++i) EXPECT_NEAR(step2[i], 3.0 * step1[i], 1e-12);
}

TEST(GuidedNoise, Oracles) {
  GuidanceConfig cfg;
  const auto s = schedule_at1(1.0 - 0.64);  // lambda = 0.8
  auto eps = TensorD::from_data({2}, {1, 1});
  auto g = TensorD::from_data({2}, {2, -4});
  zdtest::expect_all_near(values(guided_noise(eps, g, 1, cfg, s)), {1.4, 0.2}, 1e-12);
  cfg.eta = 0.0;
  zdtest::expect_all_near(values(guided_noise(eps, g, 1, cfg, s)), {1.0, 1.0}, 0.0);
  EXPECT_THROW(guided_noise(TensorD::zeros({2}), TensorD::zeros({3}), 1, cfg, s), std::invalid_argument);
}

// Through the DDIM step, a noise shift d moves x_{t-1} by c * d with
// c = sqrt(1 - a_prev) - sqrt(a_prev) * sqrt(1 - a_t) / sqrt(a_t) < 0, so the
// sample moves against the gradient.
TEST(GuidedNoise, DdimMovesSampleAgainstGradient) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  GuidanceConfig cfg;
  for (auto [t, tp] : std::vector<std::pair<int, int>>{{981, 961}, {501, 481}, {21, 1}, {1, 0}}) {
    auto x = rand_d({3, 2, 2}, static_cast<std::uint64_t>(t));
    auto eps = rand_d({3, 2, 2}, static_cast<std::uint64_t>(t) + 7);
    auto g = rand_d({3, 2, 2}, static_cast<std::uint64_t>(t) + 9, -3, 3);
    const auto base = values(ddim_step(x, eps, t, tp, s));
    const auto moved = values(ddim_step(x, guided_noise(eps, g, t, cfg, s), t, tp, s));
    const auto dir = values(normalize_grad(g, NormMode::linf));
    const double at = s.at(t), ap = s.at(tp);
    const double c = std::sqrt(1.0 - ap) - std::sqrt(ap) * std::sqrt(1.0 - at) / std::sqrt(at);
    EXPECT_LT(c, 0.0);
    for (size_t i = 0; i < base.size(); ++i) {
      EXPECT_NEAR(moved[i] - base[i], c * lambda_schedule(t, s) * dir[i], 1e-9 * std::max(1.0, std::abs(c)));
    }
  }
}

TEST(PwwBias, Oracles) {
  const auto s = schedule_at1(0.0);  // lambda = 1
  auto logits = TensorD::zeros({1, 2});
  auto biased = pww_bias(logits, {mask(1, {1})}, {{0}}, 1.0, 1, s);
  zdtest::expect_all_near(values(softmax(biased, 1)), {0.73106, 0.26894}, 5e-6);
  auto same = pww_bias(logits, {mask(1, {1})}, {{0}}, 0.0, 1, s);
  zdtest::expect_all_near(values(same), values(logits), 0.0);
}

TEST(PwwBias, SaturatesForLargeWeight) {
  const auto s = schedule_at1(0.0);
  auto logits = rand_d({4, 3}, 21);
  auto biased = softmax(pww_bias(logits, {mask(2, {1, 1, 1, 1})}, {{2}}, 1e3, 1, s), 1);
  const auto v = values(biased);
  for (int p = 0; p < 4; ++p) EXPECT_NEAR(v[static_cast<size_t>(p * 3 + 2)], 1.0, 1e-12);
}

TEST(PwwBias, OnlyMaskedPairsMove) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto logits = rand_d({2, 4, 5}, 22);  // leading batch/head axis
  auto m = mask(2, {1, 0, 0, 1});
  auto biased = values(pww_bias(logits, {m}, {{1, 3}}, 2.0, 400, s));
  const auto raw = values(logits);
  const double shift = 2.0 * lambda_schedule(400, s);
  for (int b = 0; b < 2; ++b)
    for (int p = 0; p < 4; ++p)
      for (int j = 0; j < 5; ++j) {
        const size_t i = static_cast<size_t>((b * 4 + p) * 5 + j);
        const bool hit = m.data[static_cast<size_t>(p)] && (j == 1 || j == 3);
        EXPECT_NEAR(biased[i] - raw[i], hit ? shift : 0.0, 1e-12);
      }
}

TEST(PwwBias, ShiftInvariantUnderSoftmax) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto logits = rand_d({4, 3}, 23);
  auto m = mask(2, {0, 1, 1, 0});
  auto a = softmax(pww_bias(logits, {m}, {{0}}, 1.5, 700, s), 1);
  auto b = softmax(pww_bias(add_scalar(logits, 4.2), {m}, {{0}}, 1.5, 700, s), 1);
  zdtest::expect_all_near(values(a), values(b), 1e-12);
}

TEST(PwwBias, BadInputRejected) {
  const auto s = make_schedule(10, ScheduleKind::linear_beta);
  auto logits = TensorD::zeros({4, 3});
  EXPECT_THROW(pww_bias(logits, {mask(2, {1, 0, 0, 0})}, {{3}}, 1.0, 5, s), std::invalid_argument);
  EXPECT_THROW(pww_bias(logits, {BinaryMask::empty(4, 4)}, {{0}}, 1.0, 5, s), std::invalid_argument);
  EXPECT_THROW(pww_bias(logits, {mask(2, {1, 0, 0, 0})}, {{0}}, -1.0, 5, s), std::invalid_argument);
}

TEST(PwwBias, MapsPerResolution) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  SegmentSpec seg;
  seg.resolution = 4;
  BinaryMask m = BinaryMask::empty(4, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) m.at(y, x) = 1;
  seg.masks = {m};
  seg.token_sets = {{2}};
  auto maps = pww_bias_maps<double>(seg, {4, 2}, 6, 1.0, 300, s);
  ASSERT_EQ(maps.size(), 2u);
  EXPECT_EQ(maps.at(4).shape(), (Shape{16, 6}));
  EXPECT_EQ(maps.at(2).shape(), (Shape{4, 6}));
  EXPECT_NEAR(values(maps.at(2))[2], lambda_schedule(300, s), 1e-12);  // top-left cell
  EXPECT_EQ(values(maps.at(2))[3 * 6 + 2], 0.0);
  EXPECT_TRUE(pww_bias_maps<double>(seg, {4, 2}, 6, 0.0, 300, s).empty());
}

TEST(GuidanceConfig, JsonRoundTripAndValidation) {
  GuidanceConfig c;
  c.eta = 2.0;
  c.tau = 0.25;
  c.norm_mode = NormMode::l2;
  c.loss_mode = LossMode::bce;
  c.layer_filter = LayerFilter::decoder_only;
  c.averaging = Averaging::per_head;
  c.pww_weight = 0.3;
  c.step_decay = StepDecay::noise_var;
  c.update_target = UpdateTarget::sample;
  nlohmann::json j = c;
  const GuidanceConfig back = j.get<GuidanceConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  for (const auto& name : {"none", "L1", "L2", "Linf"}) EXPECT_EQ(norm_mode_name(parse_norm_mode(name)), name);
  EXPECT_THROW(parse_norm_mode("L3"), std::invalid_argument);
  EXPECT_THROW(parse_loss_mode("mse"), std::invalid_argument);
  EXPECT_EQ(j["update_target"], "sample");
  EXPECT_EQ(j["step_decay"], "noise-var");
  EXPECT_THROW(parse_update_target("latent"), std::invalid_argument);
  EXPECT_THROW(parse_step_decay("cosine"), std::invalid_argument);
  const GuidanceConfig defaults = nlohmann::json::object().get<GuidanceConfig>();
  EXPECT_EQ(defaults.update_target, UpdateTarget::noise);
  EXPECT_EQ(defaults.step_decay, StepDecay::noise_std);

  GuidanceConfig bad;
  bad.tau = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = GuidanceConfig{};
  bad.eta = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = GuidanceConfig{};
  bad.pww_weight = -0.1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

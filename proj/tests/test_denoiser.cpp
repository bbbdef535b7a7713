#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "test_util.hpp"
#include "zestdiff/checkpoint.hpp"
#include "zestdiff/dataset.hpp"
#include "zestdiff/denoiser.hpp"
#include "zestdiff/schedule.hpp"
#include "zestdiff/train.hpp"

using namespace zestdiff;
using namespace zdtest;

TEST(Schedule, Endpoints) {
  for (auto kind : {ScheduleKind::linear_beta, ScheduleKind::cosine}) {
    const auto s = make_schedule(1000, kind);
    EXPECT_EQ(s.alpha[0], 1.0);
    EXPECT_LE(s.alpha[1000], 1e-3);
    for (int t = 1; t <= 1000; ++t) EXPECT_LT(s.alpha[t], s.alpha[t - 1]) << t;
  }
}

TEST(Schedule, LinearBetaFirstStep) { EXPECT_NEAR(make_schedule(1000, ScheduleKind::linear_beta).alpha[1], 0.9999, 1e-15); }

TEST(Schedule, RejectsBadInput) {
  EXPECT_THROW(make_schedule(9, ScheduleKind::linear_beta), std::invalid_argument);
  EXPECT_THROW(parse_schedule_kind("sigmoid"), std::invalid_argument);
}

namespace {

NoiseSchedule schedule_with_alpha(double a) {
  NoiseSchedule s = make_schedule(10, ScheduleKind::linear_beta);
  s.alpha[5] = a;
  s.sqrt_alpha[5] = std::sqrt(a);
  s.sqrt_one_minus_alpha[5] = std::sqrt(1.0 - a);
  return s;
}

}  // namespace

TEST(AddNoise, Oracles) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto x0 = rand_d({2, 3}, 1);
  EXPECT_EQ(values(add_noise(x0, 0, rand_d({2, 3}, 2), s)), values(x0));
  const auto q = schedule_with_alpha(0.25);
  expect_all_near(values(add_noise(x0, 5, TensorD::zeros({2, 3}), q)), values(mul_scalar(x0, 0.5)), 1e-15);
  EXPECT_NEAR(add_noise(TensorD::from_data({1}, {2.0}), 5, TensorD::from_data({1}, {1.0}), q).item(), 1.86603, 5e-6);
  EXPECT_THROW(add_noise(x0, 1001, x0, s), std::out_of_range);
  EXPECT_THROW(add_noise(x0, -1, x0, s), std::out_of_range);
}

TEST(AddNoise, ExactInversion) {
  const auto s = make_schedule(1000, ScheduleKind::linear_beta);
  auto x0 = rand_d({16}, 3);
  auto eps = rand_d({16}, 4);
  for (int t : {1, 10, 250, 500, 999}) {
    auto xt = add_noise(x0, t, eps, s);
    auto back = mul_scalar(sub(xt, mul_scalar(eps, s.sqrt_one_minus_alpha[t])), 1.0 / s.sqrt_alpha[t]);
    expect_all_near(values(back), values(x0), 1e-5);
  }
}

TEST(Prompt, LengthAndVocabulary) {
  const Vocabulary vocab;
  EXPECT_EQ(vocab.size(), 40);
  EXPECT_THROW(PromptSpec::encode("a purple circle", vocab), std::invalid_argument);
  std::string longp;
  for (int i = 0; i < 17; ++i) longp += "a ";
  EXPECT_THROW(PromptSpec::encode(longp, vocab), std::invalid_argument);
  const auto p = PromptSpec::encode("a red circle on gray background", vocab);
  EXPECT_EQ(p.text(vocab), "a red circle on gray background");
  EXPECT_EQ(p.padded(vocab).size(), 16u);
}

TEST(UNetConfig, NeedsTwoAttentionResolutionsAndHeads) {
  DenoiserConfig c;
  EXPECT_NO_THROW(c.validate());
  c.attention_resolutions = {16};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = DenoiserConfig{};
  c.heads = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

class DefaultUNet : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ckpt_ = new Checkpoint(Checkpoint::initial(DenoiserConfig{}, make_schedule(1000, ScheduleKind::linear_beta), 5));
    model_ = new Denoiser<float>(*ckpt_);
  }
  static void TearDownTestSuite() {
    delete model_;
    delete ckpt_;
  }
  static Checkpoint* ckpt_;
  static Denoiser<float>* model_;
};
Checkpoint* DefaultUNet::ckpt_ = nullptr;
Denoiser<float>* DefaultUNet::model_ = nullptr;

TEST_F(DefaultUNet, CaptureYieldsRowStochasticRecordPerLayerAndHead) {
  NoGradGuard ng;
  auto x = rand_f({1, 3, 32, 32}, 1);
  const auto prompt = PromptSpec::encode("a red circle and a blue square on gray background", model_->vocab());
  const auto pred = model_->predict_noise(x, 500, prompt, true);
  const auto layers = model_->unet().attention_layers();
  ASSERT_EQ(pred.records.size(), layers.size() * 4);
  for (const auto& r : pred.records) {
    const auto P = r.map.dim(0), N = r.map.dim(1);
    EXPECT_EQ(P, r.layer.resolution * r.layer.resolution);
    EXPECT_EQ(N, 16);
    auto d = r.map.data();
    for (std::int64_t p = 0; p < P; ++p) {
      double s = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const float v = d[static_cast<size_t>(p * N + n)];
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-5);
    }
  }
  // Both resolutions appear on both sides of the network.
  std::set<int> res;
  for (const auto& l : layers) res.insert(l.resolution);
  EXPECT_EQ(res, (std::set<int>{16, 8}));
}

TEST_F(DefaultUNet, ForwardIsDeterministicAndCaptureIsObservationOnly) {
  NoGradGuard ng;
  auto x = rand_f({1, 3, 32, 32}, 2);
  const auto prompt = PromptSpec::encode("a green triangle on black background", model_->vocab());
  const auto a = model_->predict_noise(x, 321, prompt, false);
  const auto b = model_->predict_noise(x, 321, prompt, false);
  const auto c = model_->predict_noise(x, 321, prompt, true);
  EXPECT_EQ(values(a.eps), values(b.eps));
  EXPECT_EQ(values(a.eps), values(c.eps));
  EXPECT_EQ(a.eps.shape(), x.shape());
}

TEST_F(DefaultUNet, RandomInitOutputIsFinite) {
  NoGradGuard ng;
  for (int t : {1, 500, 1000}) {
    const auto e = model_->predict_noise(rand_f({1, 3, 32, 32}, static_cast<std::uint64_t>(t)), t, std::nullopt, false);
    for (float v : e.eps.data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST_F(DefaultUNet, RejectsBadInputs) {
  NoGradGuard ng;
  PromptSpec too_long;
  too_long.tokens.assign(17, 2);
  EXPECT_THROW(model_->predict_noise(rand_f({1, 3, 32, 32}, 1), 10, too_long, false), std::invalid_argument);
  EXPECT_THROW(model_->predict_noise(rand_f({2, 3, 32, 32}, 1), 10, std::nullopt, false), std::invalid_argument);
  EXPECT_THROW(model_->predict_noise(rand_f({1, 3, 32, 32}, 1), 1001, std::nullopt, false), std::out_of_range);
}

TEST_F(DefaultUNet, CheckpointRoundTripsBitExactly) {
  const auto dir = std::filesystem::temp_directory_path() / "zd_ckpt_test";
  std::filesystem::create_directories(dir);
  ckpt_->save(dir / "a.ntc");
  const auto back = Checkpoint::load(dir / "a.ntc");
  EXPECT_EQ(back.to_ntc().serialize(), ckpt_->to_ntc().serialize());
  EXPECT_EQ(back.content_hash(), ckpt_->content_hash());
  ASSERT_EQ(back.params.size(), ckpt_->params.size());
  for (const auto& [name, t] : ckpt_->params) EXPECT_EQ(values(back.params.at(name)), values(t)) << name;
  EXPECT_EQ(back.schedule.alpha, ckpt_->schedule.alpha);
  EXPECT_EQ(back.vocab.words(), ckpt_->vocab.words());
  std::filesystem::remove_all(dir);
}

namespace {

TrainConfig small_train(std::int64_t steps) {
  TrainConfig tc;
  tc.model = small_config();
  tc.steps = steps;
  tc.batch_size = 8;
  tc.warmup_steps = 2;
  tc.val_every = 0;
  return tc;
}

std::vector<double> run_losses(const Dataset& data, const TrainConfig& tc, std::uint64_t seed,
                               const std::optional<Checkpoint>& resume, Checkpoint* out) {
  std::vector<double> losses;
  TrainHooks hooks;
  hooks.on_step = [&](const TrainProgress& p) { losses.push_back(p.loss); };
  auto c = train(data, tc, seed, hooks, resume);
  if (out) *out = std::move(c);
  return losses;
}

}  // namespace

TEST(Train, SameSeedSameLossCurve) {
  const Dataset data = make_dataset(40, 3, Vocabulary());
  const auto tc = small_train(6);
  const auto a = run_losses(data, tc, 11, std::nullopt, nullptr);
  const auto b = run_losses(data, tc, 11, std::nullopt, nullptr);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  const auto c = run_losses(data, tc, 12, std::nullopt, nullptr);
  EXPECT_NE(a, c);
}

TEST(Train, ResumeFollowsUninterruptedTrajectory) {
  const Dataset data = make_dataset(40, 3, Vocabulary());
  const auto full = run_losses(data, small_train(10), 21, std::nullopt, nullptr);
  Checkpoint half;
  const auto first = run_losses(data, small_train(5), 21, std::nullopt, &half);
  // Through the on-disk format, as the CLI does.
  const auto reloaded = Checkpoint::from_ntc(NtcFile::parse(half.to_ntc().serialize()));
  const auto second = run_losses(data, small_train(10), 21, reloaded, nullptr);
  ASSERT_EQ(first.size() + second.size(), full.size());
  for (size_t i = 0; i < second.size(); ++i) {
    EXPECT_NEAR(second[i], full[first.size() + i], 0.05 * full[first.size() + i]) << "step " << first.size() + i + 1;
  }
}

TEST(Train, DivergenceAbortsWithLastGoodWeights) {
  const Dataset data = make_dataset(16, 3, Vocabulary());
  auto tc = small_train(50);
  tc.lr = 1e30;
  tc.warmup_steps = 0;
  tc.grad_clip = 0.0;
  try {
    train(data, tc, 1);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.step(), 1);
    for (const auto& [name, t] : e.last_good().params) {
      for (float v : t.data()) ASSERT_TRUE(std::isfinite(v)) << name;
    }
  }
}

TEST(Train, EmptyDatasetRejected) {
  Dataset empty;
  empty.image_size = 32;
  EXPECT_THROW(train(empty, small_train(1), 1), std::invalid_argument);
}

TEST(Train, SingleBatchOverfit) {
  const Dataset data = make_dataset(32, 5, Vocabulary());
  auto tc = small_train(2000);
  tc.batch_size = 32;
  tc.fixed_batch = true;
  tc.cond_drop = 0.0;
  tc.lr_schedule = "constant";
  tc.weight_decay = 0.0;
  tc.warmup_steps = 50;
  const auto losses = run_losses(data, tc, 8, std::nullopt, nullptr);
  ASSERT_EQ(losses.size(), 2000u);
  EXPECT_LT(losses.back(), 0.1 * losses.front()) << "initial " << losses.front() << " final " << losses.back();
}

TEST(Train, ShippedModelBeatsUntrainedBaseline) {
  if (!std::filesystem::exists(ZESTDIFF_MODEL)) GTEST_SKIP() << "no trained model at " << ZESTDIFF_MODEL;
  const auto trained = Checkpoint::load(ZESTDIFF_MODEL);
  const auto untrained = Checkpoint::initial(trained.config, trained.schedule, trained.meta.seed);
  const Dataset data = make_dataset(400, 777, trained.vocab);
  const double lt = validation_loss(trained, data, 3, 20);
  const double lu = validation_loss(untrained, data, 3, 20);
  EXPECT_LT(lt, 0.5 * lu) << "trained " << lt << " untrained " << lu;
}

#include "zestdiff/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "zestdiff/ops.hpp"
#include "zestdiff/rng.hpp"

namespace zestdiff {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  model.validate();
  if (steps < 1) fail("steps must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (lr_schedule != "cosine" && lr_schedule != "constant") fail("lr_schedule must be cosine or constant");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (cond_drop < 0.0 || cond_drop > 1.0) fail("cond_drop must be in [0, 1]");
  if (val_every < 0 || val_max_items < 1) fail("invalid validation settings");
  make_schedule(T_train, parse_schedule_kind(schedule));
}

double TrainConfig::lr_at(std::int64_t step) const {
  if (warmup_steps > 0 && step <= warmup_steps) return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (lr_schedule == "constant") return lr;
  const double span = static_cast<double>(std::max<std::int64_t>(1, steps - warmup_steps));
  const double progress = std::clamp(static_cast<double>(step - warmup_steps) / span, 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return lr * (min_lr_ratio + (1.0 - min_lr_ratio) * cosine);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"T_train", c.T_train},
       {"schedule", c.schedule},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"min_lr_ratio", c.min_lr_ratio},
       {"lr_schedule", c.lr_schedule},
       {"warmup_steps", c.warmup_steps},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"grad_clip", c.grad_clip},
       {"cond_drop", c.cond_drop},
       {"val_every", c.val_every},
       {"val_max_items", c.val_max_items},
       {"fixed_batch", c.fixed_batch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.model = j.contains("model") ? j.at("model").get<DenoiserConfig>() : d.model;
  c.T_train = j.value("T_train", d.T_train);
  c.schedule = j.value("schedule", d.schedule);
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.min_lr_ratio = j.value("min_lr_ratio", d.min_lr_ratio);
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.cond_drop = j.value("cond_drop", d.cond_drop);
  c.val_every = j.value("val_every", d.val_every);
  c.val_max_items = j.value("val_max_items", d.val_max_items);
  c.fixed_batch = j.value("fixed_batch", d.fixed_batch);
}

TrainingDiverged::TrainingDiverged(std::int64_t step, Checkpoint last_good)
    : NumericalError("training diverged at step " + std::to_string(step) + " (non-finite loss or gradient)"),
      step_(step),
      last_good_(std::move(last_good)) {}

namespace {

struct Batch {
  TensorF x_t;
  TensorF noise;
  std::vector<int> t;
  std::vector<std::vector<std::int64_t>> ids;
};

Batch make_batch(const Dataset& data, const std::vector<std::int64_t>& items, Rng& rng, const NoiseSchedule& schedule,
                 const Vocabulary& vocab, double cond_drop, bool draw_items_from_rng, std::int64_t pool) {
  const auto B = static_cast<std::int64_t>(items.empty() ? 0 : items.size());
  Batch b;
  std::vector<std::int64_t> chosen = items;
  if (draw_items_from_rng) {
    for (auto& c : chosen) c = rng.below(pool);
  }
  const std::int64_t hw = static_cast<std::int64_t>(data.image_size) * data.image_size;
  const std::int64_t per = 3 * hw;
  std::vector<float> xt(static_cast<size_t>(B * per));
  std::vector<float> noise(static_cast<size_t>(B * per));
  const auto null_ids = PromptSpec::null_prompt(vocab).padded(vocab);
  for (std::int64_t i = 0; i < B; ++i) {
    const int t = 1 + static_cast<int>(rng.below(schedule.T));
    b.t.push_back(t);
    const bool drop = rng.uniform() < cond_drop;
    b.ids.push_back(drop ? null_ids : data.prompts[static_cast<size_t>(chosen[static_cast<size_t>(i)])].padded(vocab));
    const auto x0 = data.image_chw(chosen[static_cast<size_t>(i)]);
    const double sa = schedule.sqrt_alpha[static_cast<size_t>(t)];
    const double sn = schedule.sqrt_one_minus_alpha[static_cast<size_t>(t)];
    for (std::int64_t k = 0; k < per; ++k) {
      const float e = static_cast<float>(rng.normal());
      noise[static_cast<size_t>(i * per + k)] = e;
      xt[static_cast<size_t>(i * per + k)] = static_cast<float>(sa * x0[static_cast<size_t>(k)] + sn * e);
    }
  }
  const Shape shape{B, 3, data.image_size, data.image_size};
  b.x_t = TensorF::from_data(shape, std::move(xt));
  b.noise = TensorF::from_data(shape, std::move(noise));
  return b;
}

TensorF mse(const TensorF& a, const TensorF& b) {
  auto d = sub(a, b);
  return mean(mul(d, d));
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

Checkpoint train(const Dataset& data, const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks,
                 const std::optional<Checkpoint>& resume) {
  config.validate();
  if (data.size() == 0 || data.n_train == 0) throw std::invalid_argument("train: dataset is empty");
  if (data.image_size != config.model.image_size) {
    throw std::invalid_argument("train: dataset images are " + std::to_string(data.image_size) +
                                " px but the model expects " + std::to_string(config.model.image_size));
  }

  Checkpoint state = resume ? *resume
                            : Checkpoint::initial(config.model, make_schedule(config.T_train,
                                                                              parse_schedule_kind(config.schedule)),
                                                  seed);
  if (resume && nlohmann::json(resume->config) != nlohmann::json(config.model)) {
    throw std::invalid_argument("train: resume checkpoint was trained with a different model config");
  }
  state.meta.seed = seed;
  UNet<float> net = make_unet<float>(state);
  net.set_requires_grad(true);
  for (const auto& [name, t] : net.params()) {
    if (!state.optimizer.m.count(name)) {
      state.optimizer.m[name].assign(static_cast<size_t>(t.numel()), 0.0f);
      state.optimizer.v[name].assign(static_cast<size_t>(t.numel()), 0.0f);
    }
  }
  std::map<std::string, std::vector<float>> last_good;
  for (const auto& [name, t] : net.params()) last_good[name].assign(t.data().begin(), t.data().end());

  auto snapshot = [&](const std::map<std::string, std::vector<float>>* weights) {
    Checkpoint c = state;
    for (auto& [name, t] : c.params) {
      const auto& src = weights ? weights->at(name)
                                : std::vector<float>(net.params().at(name).data().begin(),
                                                     net.params().at(name).data().end());
      t = TensorF::from_data(t.shape(), src);
    }
    return c;
  };

  const std::vector<std::int64_t> slots(static_cast<size_t>(config.batch_size), 0);
  for (std::int64_t step = state.meta.steps + 1; step <= config.steps; ++step) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(config.fixed_batch ? 0 : step)));
    Batch batch = make_batch(data, slots, rng, state.schedule, state.vocab, config.cond_drop, true, data.n_train);

    auto context = net.encode_text(batch.ids);
    auto out = net.forward(batch.x_t, batch.t, context);
    auto loss = mse(out.eps, batch.noise);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) throw TrainingDiverged(step, snapshot(&last_good));
    backward(loss);

    double sq = 0.0;
    bool finite = true;
    for (const auto& [_, t] : net.params()) {
      if (!t.has_grad()) continue;
      finite = finite && all_finite(t.grad());
      for (float g : t.grad()) sq += static_cast<double>(g) * g;
    }
    if (!finite || !std::isfinite(sq)) throw TrainingDiverged(step, snapshot(&last_good));
    const double gnorm = std::sqrt(sq);
    const double clip = (config.grad_clip > 0.0 && gnorm > config.grad_clip) ? config.grad_clip / gnorm : 1.0;

    for (auto& [name, t] : net.params()) last_good[name].assign(t.data().begin(), t.data().end());

    const double lr = config.lr_at(step);
    const std::int64_t k = ++state.optimizer.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(k));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(k));
    for (auto& [name, t] : net.params()) {
      auto w = t.mutable_data();
      auto& m = state.optimizer.m[name];
      auto& v = state.optimizer.v[name];
      const bool decay = t.ndim() >= 2;
      auto g = t.grad();
      for (size_t i = 0; i < w.size(); ++i) {
        const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]) * clip;
        m[i] = static_cast<float>(config.beta1 * m[i] + (1.0 - config.beta1) * gi);
        v[i] = static_cast<float>(config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + config.adam_eps);
        if (decay) upd += config.weight_decay * w[i];
        w[i] = static_cast<float>(w[i] - lr * upd);
      }
      t.zero_grad();
    }
    state.meta.steps = step;

    TrainProgress progress{step, loss_value, lr, std::nullopt};
    const bool last = step == config.steps;
    if (config.val_every > 0 && (step % config.val_every == 0 || last)) {
      progress.val_loss = validation_loss(snapshot(nullptr), data, seed, config.val_max_items);
    }
    if (hooks.on_step) hooks.on_step(progress);
    if (hooks.on_checkpoint && ((hooks.checkpoint_every > 0 && step % hooks.checkpoint_every == 0) || last)) {
      hooks.on_checkpoint(snapshot(nullptr));
    }
  }
  return snapshot(nullptr);
}

double validation_loss(const Checkpoint& ckpt, const Dataset& data, std::uint64_t seed, int max_items) {
  if (data.size() == 0) throw std::invalid_argument("validation_loss: dataset is empty");
  const bool use_val = data.n_val() > 0;
  const std::int64_t begin = use_val ? data.n_train : 0;
  const std::int64_t count = std::min<std::int64_t>(use_val ? data.n_val() : data.n_train, max_items);
  const UNet<float> net = make_unet<float>(ckpt);
  NoGradGuard no_grad;
  double total = 0.0;
  constexpr std::int64_t chunk = 32;
  for (std::int64_t start = 0; start < count; start += chunk) {
    const std::int64_t n = std::min(chunk, count - start);
    std::vector<std::int64_t> items(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) items[static_cast<size_t>(i)] = begin + start + i;
    Rng rng(derive_seed(seed ^ 0x76616c6964617465ull, static_cast<std::uint64_t>(start)));
    Batch b = make_batch(data, items, rng, ckpt.schedule, ckpt.vocab, 0.0, false, 0);
    auto out = net.forward(b.x_t, b.t, net.encode_text(b.ids));
    total += mse(out.eps, b.noise).item() * static_cast<double>(n);
  }
  return total / static_cast<double>(count);
}

}  // namespace zestdiff

#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>

#include "zestdiff/checkpoint.hpp"
#include "zestdiff/dataset.hpp"
#include "zestdiff/errors.hpp"

namespace zestdiff {

struct TrainConfig {
  DenoiserConfig model;
  int T_train = 1000;
  std::string schedule = "linear-beta";
  std::int64_t steps = 6000;
  int batch_size = 32;
  double lr = 1e-3;
  double min_lr_ratio = 0.1;   // cosine decay floor as a fraction of lr
  std::string lr_schedule = "cosine";  // or "constant"
  std::int64_t warmup_steps = 200;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables
  double cond_drop = 0.1;
  std::int64_t val_every = 500;
  int val_max_items = 256;
  /// Reuse step 0's batch, timesteps and noise at every step.
  bool fixed_batch = false;

  void validate() const;
  double lr_at(std::int64_t step) const;  // step counts from 1
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainProgress {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_loss;
};

/// Non-finite loss or gradient. Carries the weights from before the
/// offending update.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(std::int64_t step, Checkpoint last_good);
  std::int64_t step() const { return step_; }
  const Checkpoint& last_good() const { return last_good_; }

 private:
  std::int64_t step_;
  Checkpoint last_good_;
};

struct TrainHooks {
  std::function<void(const TrainProgress&)> on_step;
  /// Called with the current state every `checkpoint_every` steps and at the end.
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::int64_t checkpoint_every = 0;
};

/// Trains the noise estimator with MSE on eps, AdamW and classifier-free
/// conditioning dropout. Per-step randomness derives from (seed, step), so a
/// run resumed from a saved checkpoint follows the uninterrupted trajectory.
Checkpoint train(const Dataset& data, const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks = {},
                 const std::optional<Checkpoint>& resume = std::nullopt);

/// Mean eps-prediction MSE over the validation split (or the training split if
/// there is no validation data), with fixed timesteps and noise.
double validation_loss(const Checkpoint& ckpt, const Dataset& data, std::uint64_t seed, int max_items = 256);

}  // namespace zestdiff

#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "zestdiff/denoiser.hpp"
#include "zestdiff/guidance.hpp"
#include "zestdiff/image_io.hpp"
#include "zestdiff/sampler.hpp"

namespace zestdiff {

enum class Method { none, pww, zest, zest_pww };
Method parse_method(const std::string& name);
std::string method_name(Method m);

/// Attention-bias weight chosen by the calibration sweep (see
/// configs/pww_calibration.json).
inline constexpr double kCalibratedPwwWeight = 3.0;

/// Guidance settings a method runs with. `base` supplies eta, tau, norm,
/// layer and averaging choices; the method decides loss mode and the bias.
GuidanceConfig method_config(Method m, const GuidanceConfig& base = {}, double pww_weight = kCalibratedPwwWeight);

/// Whether the method hands segments to the sampler at all.
bool method_uses_segments(Method m);

/// Baseline for the ablation sweeps: BCE loss only, no attention bias.
GuidanceConfig ablation_base_config();

/// Worker count: ZESTDIFF_THREADS if set (>= 1), else hardware concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

struct EvalSettings {
  int n = 200;
  std::uint64_t seed = 1234;
  int steps = 50;
  int threads = 1;
  /// Score the rendered scene images instead of generating.
  bool ground_truth = false;
};

struct SceneResult {
  int index = 0;
  double miou = 0.0;
  bool caption_match = false;
  double ms = 0.0;
};

struct EvalResult {
  std::vector<SceneResult> scenes;
  double miou_mean = 0.0;
  double miou_stderr = 0.0;
  double caption_token_accuracy = 0.0;
  double time_per_sample_ms = 0.0;
  std::vector<Image8> images;  // generated images in scene order

  /// Metrics JSON; timing is omitted when `include_timing` is false so the
  /// output is byte-stable across runs.
  nlohmann::json metrics(bool include_timing = true) const;
};

/// Sampling noise seed for scene `index`; shared by every method.
std::uint64_t sample_seed(std::uint64_t seed, int index);

/// mIoU between oracle segmentation of `image` and the scene's object masks
/// (matched by colour), and whether the detected objects match the caption.
SceneResult score_image(const Image8& image, const Scene& scene);

EvalResult evaluate(const Denoiser<float>& model, const GuidanceConfig& guidance, bool use_segments,
                    const EvalSettings& settings);

/// Scores the rendered scenes themselves; no model involved.
EvalResult evaluate_rendered(const EvalSettings& settings, int image_size = 32);

/// Mean/covariance Frechet distance between 4x4-average-pooled images, for
/// information only.
double pixel_frechet_distance(const std::vector<Image8>& a, const std::vector<Image8>& b);

/// Held-out reference scenes for pixel_frechet_distance.
std::vector<Image8> reference_images(int n, std::uint64_t seed);

struct AblationEntry {
  std::string value;
  GuidanceConfig guidance;
  bool use_segments = true;
  double miou_mean = 0.0;
  double miou_stderr = 0.0;
  double caption_token_accuracy = 0.0;
  double wall_s = 0.0;
  std::vector<double> per_scene;
};

struct AblationReport {
  std::string axis;
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<AblationEntry> entries;

  nlohmann::json to_json(bool include_timing = true) const;
};

const std::vector<std::string>& ablation_axes();
std::vector<std::string> default_grid(const std::string& axis);

/// Guidance settings for one grid value of an axis (invalid_argument for an
/// unknown axis or value).
AblationEntry ablation_setting(const std::string& axis, const std::string& value);

/// Evaluates every grid value on the same scenes and noise seeds.
AblationReport run_ablation(const Denoiser<float>& model, const std::string& axis,
                            const std::vector<std::string>& values, const EvalSettings& settings);

/// Bar chart of mean mIoU per grid value with stderr whiskers.
Image8 ablation_plot(const AblationReport& report);

/// Colour overlay of soft segment maps (K, H, W): segment k tinted with its
/// object colour when known, else a fixed cycle.
Image8 estimate_overlay(const TensorF& estimates, const std::vector<int>& colors = {});

}  // namespace zestdiff

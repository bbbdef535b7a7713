#include "zestdiff/harness.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "zestdiff/rng.hpp"
#include "zestdiff/shapes.hpp"

namespace zestdiff {

Method parse_method(const std::string& name) {
  if (name == "none") return Method::none;
  if (name == "pww") return Method::pww;
  if (name == "zest") return Method::zest;
  if (name == "zest+pww") return Method::zest_pww;
  throw std::invalid_argument("unknown method '" + name + "' (expected none, pww, zest, zest+pww)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::pww: return "pww";
    case Method::zest: return "zest";
    case Method::zest_pww: return "zest+pww";
  }
  return "?";
}

GuidanceConfig method_config(Method m, const GuidanceConfig& base, double pww_weight) {
  GuidanceConfig g = base;
  g.loss_mode = LossMode::combined;
  switch (m) {
    case Method::none:
      g.eta = 0.0;
      g.pww_weight = 0.0;
      break;
    case Method::pww:
      g.eta = 0.0;
      g.pww_weight = pww_weight;
      break;
    case Method::zest:  // gradient guidance alone, the ablation baseline
      g.loss_mode = LossMode::bce;
      g.pww_weight = 0.0;
      break;
    case Method::zest_pww:
      g.pww_weight = pww_weight;
      break;
  }
  return g;
}

bool method_uses_segments(Method m) { return m != Method::none; }

GuidanceConfig ablation_base_config() {
  GuidanceConfig g;
  g.loss_mode = LossMode::bce;
  g.pww_weight = 0.0;
  return g;
}

int thread_count() {
  if (const char* env = std::getenv("ZESTDIFF_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::uint64_t sample_seed(std::uint64_t seed, int index) {
  return derive_seed(seed ^ 0x73616d706c657321ull, static_cast<std::uint64_t>(index));
}

SceneResult score_image(const Image8& image, const Scene& scene) {
  const Palette& palette = Palette::standard();
  const auto oracle = oracle_segment(image, palette);
  std::vector<BinaryMask> pred;
  std::vector<CaptionObject> expected;
  for (const auto& o : scene.objects) {
    pred.push_back(oracle[static_cast<size_t>(o.color)]);
    expected.push_back({o.shape, o.color});
  }
  SceneResult r;
  r.miou = miou(pred, scene.masks);
  r.caption_match = detect_objects(oracle, palette) == expected;
  return r;
}

nlohmann::json EvalResult::metrics(bool include_timing) const {
  nlohmann::json j = {{"n", scenes.size()},
                      {"miou_mean", miou_mean},
                      {"miou_stderr", miou_stderr},
                      {"caption_token_accuracy", caption_token_accuracy}};
  if (include_timing) j["time_per_sample"] = time_per_sample_ms / 1000.0;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : scenes) per.push_back(s.miou);
  j["per_scene_miou"] = per;
  return j;
}

namespace {

std::pair<double, double> mean_stderr(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()))};
}

int working_resolution(const Denoiser<float>& model) {
  const auto res = model.attention_resolutions();
  return *std::max_element(res.begin(), res.end());
}

}  // namespace

namespace {

EvalResult run_scenes(const EvalSettings& settings, int size, const std::function<Image8(const Scene&, int)>& make) {
  if (settings.n < 1) throw std::invalid_argument("evaluate: need at least one scene");
  EvalResult out;
  out.scenes.resize(static_cast<size_t>(settings.n));
  out.images.resize(static_cast<size_t>(settings.n));
  parallel_for(settings.n, settings.threads, [&](int i) {
    const Scene scene = scene_for_index(settings.seed, static_cast<std::uint64_t>(i), size);
    const auto start = std::chrono::steady_clock::now();
    Image8 image = make(scene, i);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    SceneResult sr = score_image(image, scene);
    sr.index = i;
    sr.ms = ms;
    out.scenes[static_cast<size_t>(i)] = sr;
    out.images[static_cast<size_t>(i)] = std::move(image);
  });
  std::vector<double> m;
  double ok = 0.0, ms = 0.0;
  for (const auto& s : out.scenes) {
    m.push_back(s.miou);
    ok += s.caption_match ? 1.0 : 0.0;
    ms += s.ms;
  }
  std::tie(out.miou_mean, out.miou_stderr) = mean_stderr(m);
  out.caption_token_accuracy = ok / static_cast<double>(settings.n);
  out.time_per_sample_ms = ms / static_cast<double>(settings.n);
  return out;
}

}  // namespace

EvalResult evaluate(const Denoiser<float>& model, const GuidanceConfig& guidance, bool use_segments,
                    const EvalSettings& settings) {
  const int size = model.config().image_size;
  if (settings.ground_truth) return evaluate_rendered(settings, size);
  const int res = working_resolution(model);
  return run_scenes(settings, size, [&](const Scene& scene, int i) {
    std::optional<SegmentSpec> segs;
    if (use_segments) segs = segments_for_scene(scene, res);
    return sample(model, scene.caption(model.vocab()), segs, guidance,
                  SamplerConfig{settings.steps, sample_seed(settings.seed, i)})
        .image;
  });
}

EvalResult evaluate_rendered(const EvalSettings& settings, int image_size) {
  return run_scenes(settings, image_size, [](const Scene& scene, int) { return scene.image; });
}

namespace {

Eigen::VectorXd pooled_features(const Image8& img) {
  constexpr int f = 4;
  const int h = img.height / f, w = img.width / f;
  Eigen::VectorXd v(h * w * 3);
  int k = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = 0; dy < f; ++dy) {
          for (int dx = 0; dx < f; ++dx) s += img.at(y * f + dy, x * f + dx, c);
        }
        v(k++) = s / (f * f * 127.5) - 1.0;
      }
    }
  }
  return v;
}

void moments(const std::vector<Image8>& images, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  if (images.size() < 2) throw std::invalid_argument("pixel_frechet_distance: need at least two images per set");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(images.size()), pooled_features(images[0]).size());
  for (size_t i = 0; i < images.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = pooled_features(images[i]).transpose();
  mu = X.colwise().mean().transpose();
  const Eigen::MatrixXd C = X.rowwise() - mu.transpose();
  cov = (C.transpose() * C) / static_cast<double>(images.size() - 1);
}

}  // namespace

double pixel_frechet_distance(const std::vector<Image8>& a, const std::vector<Image8>& b) {
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd c1, c2;
  moments(a, mu1, c1);
  moments(b, mu2, c2);
  // Tr((C1 C2)^{1/2}) = sum sqrt(eig(C1^{1/2} C2 C1^{1/2})).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(c1);
  const Eigen::VectorXd d = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd s1 = e1.eigenvectors() * d.asDiagonal() * e1.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e2(s1 * c2 * s1);
  const double tr_sqrt = e2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu1 - mu2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
}

std::vector<Image8> reference_images(int n, std::uint64_t seed) {
  std::vector<Image8> out;
  for (int i = 0; i < n; ++i) out.push_back(scene_for_index(seed, static_cast<std::uint64_t>(i)).image);
  return out;
}

nlohmann::json AblationReport::to_json(bool include_timing) const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json r = {{"value", e.value},
                        {"guidance", e.guidance},
                        {"segments", e.use_segments},
                        {"miou_mean", e.miou_mean},
                        {"miou_stderr", e.miou_stderr},
                        {"caption_token_accuracy", e.caption_token_accuracy},
                        {"per_scene_miou", e.per_scene}};
    if (include_timing) r["wall_s"] = e.wall_s;
    rows.push_back(r);
  }
  return {{"axis", axis}, {"n", n}, {"seed", seed}, {"entries", rows}};
}

const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes = {"tau", "norm_mode", "layer_filter", "averaging", "loss_mode", "method"};
  return axes;
}

std::vector<std::string> default_grid(const std::string& axis) {
  if (axis == "tau") return {"0.1", "0.25", "0.5", "1"};
  if (axis == "norm_mode") return {"none", "L1", "L2", "Linf"};
  if (axis == "layer_filter") return layer_filter_names();
  if (axis == "averaging") return {"per-head", "per-layer", "global"};
  if (axis == "loss_mode") return {"bce", "combined"};
  if (axis == "method") return {"none", "pww", "zest", "zest+pww"};
  std::string valid;
  for (const auto& a : ablation_axes()) valid += (valid.empty() ? "" : ", ") + a;
  throw std::invalid_argument("unknown ablation axis '" + axis + "' (valid: " + valid + ")");
}

AblationEntry ablation_setting(const std::string& axis, const std::string& value) {
  default_grid(axis);  // axis check
  AblationEntry e;
  e.value = value;
  e.guidance = ablation_base_config();
  if (axis == "tau") {
    size_t pos = 0;
    double tau = 0.0;
    try {
      tau = std::stod(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != value.size()) throw std::invalid_argument("tau value '" + value + "' is not a number");
    e.guidance.tau = tau;
  } else if (axis == "norm_mode") {
    e.guidance.norm_mode = parse_norm_mode(value);
  } else if (axis == "layer_filter") {
    e.guidance.layer_filter = parse_layer_filter(value);
  } else if (axis == "averaging") {
    e.guidance.averaging = parse_averaging(value);
  } else if (axis == "loss_mode") {
    e.guidance.loss_mode = parse_loss_mode(value);
  } else if (axis == "method") {
    const Method m = parse_method(value);
    e.guidance = method_config(m);
    e.use_segments = method_uses_segments(m);
  }
  e.guidance.validate();
  return e;
}

AblationReport run_ablation(const Denoiser<float>& model, const std::string& axis,
                            const std::vector<std::string>& values, const EvalSettings& settings) {
  AblationReport report;
  report.axis = axis;
  report.n = settings.n;
  report.seed = settings.seed;
  std::vector<AblationEntry> entries;
  for (const auto& v : values.empty() ? default_grid(axis) : values) entries.push_back(ablation_setting(axis, v));
  for (auto& e : entries) {
    const auto start = std::chrono::steady_clock::now();
    const auto r = evaluate(model, e.guidance, e.use_segments, settings);
    e.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    e.miou_mean = r.miou_mean;
    e.miou_stderr = r.miou_stderr;
    e.caption_token_accuracy = r.caption_token_accuracy;
    for (const auto& s : r.scenes) e.per_scene.push_back(s.miou);
  }
  report.entries = std::move(entries);
  return report;
}

Image8 ablation_plot(const AblationReport& report) {
  const int k = static_cast<int>(report.entries.size());
  constexpr int bar = 24, gap = 12, margin = 10, plot_h = 100;
  const int width = 2 * margin + k * bar + (k + 1) * gap;
  const int height = plot_h + 2 * margin;
  Image8 img = make_image(width, height, 3, 255);
  auto set = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
  };
  auto y_of = [&](double v) { return margin + plot_h - static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * plot_h)); };
  for (double q = 0.25; q <= 1.0; q += 0.25) {
    for (int x = margin; x < width - margin; ++x) set(x, y_of(q), 220, 220, 220);
  }
  for (int i = 0; i < k; ++i) {
    const auto& e = report.entries[static_cast<size_t>(i)];
    const int x0 = margin + gap + i * (bar + gap);
    for (int y = y_of(e.miou_mean); y < margin + plot_h; ++y) {
      for (int x = x0; x < x0 + bar; ++x) set(x, y, 70, 110, 180);
    }
    const int cx = x0 + bar / 2;
    for (int y = y_of(e.miou_mean + e.miou_stderr); y <= y_of(e.miou_mean - e.miou_stderr); ++y) set(cx, y, 0, 0, 0);
  }
  for (int x = margin; x < width - margin; ++x) set(x, margin + plot_h, 0, 0, 0);
  for (int y = margin; y <= margin + plot_h; ++y) set(margin, y, 0, 0, 0);
  return img;
}

Image8 estimate_overlay(const TensorF& estimates, const std::vector<int>& colors) {
  if (estimates.ndim() != 3) throw std::invalid_argument("estimate_overlay: expected (K, H, W)");
  const auto K = estimates.dim(0), H = estimates.dim(1), W = estimates.dim(2);
  const auto& objects = Palette::standard().objects();
  Image8 img = make_image(static_cast<int>(W), static_cast<int>(H), 3, 0);
  auto d = estimates.data();
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      double rgb[3] = {0.0, 0.0, 0.0};
      for (std::int64_t s = 0; s < K; ++s) {
        const int c = s < static_cast<std::int64_t>(colors.size()) ? colors[static_cast<size_t>(s)]
                                                                   : static_cast<int>(s % objects.size());
        const double v = std::clamp(static_cast<double>(d[static_cast<size_t>((s * H + y) * W + x)]), 0.0, 1.0);
        for (int ch = 0; ch < 3; ++ch) rgb[ch] += v * objects[static_cast<size_t>(c)].rgb[static_cast<size_t>(ch)];
      }
      for (int ch = 0; ch < 3; ++ch) {
        img.at(static_cast<int>(y), static_cast<int>(x), ch) = static_cast<std::uint8_t>(std::lround(std::min(rgb[ch], 255.0)));
      }
    }
  }
  return img;
}

}  // namespace zestdiff

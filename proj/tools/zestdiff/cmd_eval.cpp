#include <algorithm>
#include <fstream>
#include <iostream>

#include "common.hpp"
#include "zestdiff/harness.hpp"

namespace zestdiff::cli {

namespace fs = std::filesystem;

namespace {

// Timing is kept out of the metrics files so they stay byte-identical across
// runs; it goes to a sidecar instead.
void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

GuidanceConfig eval_guidance(const EvalOptions& o) {
  GuidanceConfig g = method_config(parse_method(o.method));
  if (o.guidance.empty()) return g;
  nlohmann::json j = g;
  nlohmann::json overrides;
  if (fs::exists(o.guidance)) {
    std::ifstream in(o.guidance);
    overrides = nlohmann::json::parse(in);
  } else {
    overrides = nlohmann::json::parse(o.guidance);
  }
  if (!overrides.is_object()) throw InputError("--guidance must be a JSON object or a file holding one");
  j.update(overrides);
  return j.get<GuidanceConfig>();
}

}  // namespace

int run_eval(const EvalOptions& o) {
  if (o.n < 1) throw InputError("--n must be >= 1");
  if (o.n < 10) std::cerr << "warning: --n " << o.n << " is too small for a stable mean\n";
  EvalSettings settings;
  settings.n = o.n;
  settings.seed = o.seed;
  settings.threads = thread_count();
  settings.ground_truth = o.ground_truth;

  const Method method = parse_method(o.method);
  const GuidanceConfig g = eval_guidance(o);
  RunManifest m;
  m.command = "eval";
  m.seed = o.seed;
  m.config = {{"method", o.method}, {"n", o.n}, {"ground_truth", o.ground_truth}, {"guidance", nlohmann::json(g)}};
  m.input_hash = inputs_hash(m.config, {});

  EvalResult r;
  if (o.ground_truth) {
    r = evaluate_rendered(settings);
  } else {
    const Checkpoint ckpt = load_checkpoint_or_fail(o.checkpoint);
    m.checkpoint_hash = ckpt.content_hash();
    const Denoiser<float> model(ckpt);
    r = evaluate(model, g, method_uses_segments(method), settings);
  }
  nlohmann::json metrics = r.metrics(false);
  metrics["method"] = o.method;
  metrics["seed"] = o.seed;
  if (r.images.size() >= 2) {
    metrics["pixel_fd"] = pixel_frechet_distance(r.images, reference_images(5000, o.seed ^ 0x5eedf00dull));
  }
  const nlohmann::json timing = {{"time_per_sample", r.time_per_sample_ms / 1000.0}, {"threads", settings.threads}};

  std::cout << metrics.dump(2) << '\n';
  if (o.out.empty()) {
    std::cerr << "time_per_sample " << r.time_per_sample_ms / 1000.0 << " s\n";
    return 0;
  }
  const fs::path out = output_path(o.out, "");
  const fs::path timing_path = output_path(o.out, ".timing.json");
  write_json(out, metrics);
  write_json(timing_path, timing);
  m.outputs = {out.string(), timing_path.string()};
  m.metrics = metrics;
  m.metrics.erase("per_scene_miou");
  m.save(output_path(o.out, ".manifest.json"));
  return 0;
}

int run_ablate(const AblateOptions& o) {
  if (o.n < 1) throw InputError("--n must be >= 1");
  if (o.n < 10) std::cerr << "warning: --n " << o.n << " is too small for a stable mean\n";
  const auto& axes = ablation_axes();
  if (std::find(axes.begin(), axes.end(), o.axis) == axes.end()) {
    std::string valid;
    for (const auto& a : axes) valid += (valid.empty() ? "" : ", ") + a;
    throw InputError("unknown axis '" + o.axis + "'; valid axes: " + valid);
  }
  const std::vector<std::string> values = o.values.empty() ? default_grid(o.axis) : o.values;
  for (const auto& v : values) ablation_setting(o.axis, v);  // reject bad values before loading anything

  const Checkpoint ckpt = load_checkpoint_or_fail(o.checkpoint);
  const Denoiser<float> model(ckpt);
  EvalSettings settings;
  settings.n = o.n;
  settings.seed = o.seed;
  settings.threads = thread_count();
  const AblationReport report = run_ablation(model, o.axis, values, settings);

  const fs::path json_path = output_path(o.out, ".json");
  const fs::path plot_path = output_path(o.out, ".ppm");
  const fs::path timing_path = output_path(o.out, ".timing.json");
  write_json(json_path, report.to_json(false));
  write_ppm(plot_path, ablation_plot(report));
  nlohmann::json timing = nlohmann::json::array();
  for (const auto& e : report.entries) timing.push_back({{"value", e.value}, {"wall_s", e.wall_s}});
  write_json(timing_path, timing);

  RunManifest m;
  m.command = "ablate";
  m.seed = o.seed;
  m.config = {{"axis", o.axis}, {"values", values}, {"n", o.n}};
  m.checkpoint_hash = ckpt.content_hash();
  m.input_hash = inputs_hash(m.config, {});
  m.outputs = {json_path.string(), plot_path.string(), timing_path.string()};
  for (const auto& e : report.entries) {
    m.metrics["entries"].push_back({{"value", e.value}, {"miou_mean", e.miou_mean}, {"miou_stderr", e.miou_stderr}});
    std::cout << o.axis << "=" << e.value << "  mIoU " << e.miou_mean << " +- " << e.miou_stderr << "  ("
              << e.wall_s << " s)\n";
  }
  m.save(output_path(o.out, ".manifest.json"));
  return 0;
}

}  // namespace zestdiff::cli

#include <algorithm>
#include <iostream>
#include <sstream>

#include "common.hpp"
#include "zestdiff/harness.hpp"
#include "zestdiff/ntc.hpp"
#include "zestdiff/segment_file.hpp"

namespace zestdiff::cli {

namespace fs = std::filesystem;

namespace {

GuidanceConfig resolve_guidance(const SampleOptions& o) {
  GuidanceConfig g = method_config(parse_method(o.method));
  if (o.eta) g.eta = *o.eta;
  if (o.tau) g.tau = *o.tau;
  if (o.norm) g.norm_mode = parse_norm_mode(*o.norm);
  if (o.loss) g.loss_mode = parse_loss_mode(*o.loss);
  if (o.layers) g.layer_filter = parse_layer_filter(*o.layers);
  if (o.averaging) g.averaging = parse_averaging(*o.averaging);
  if (o.pww_weight) g.pww_weight = *o.pww_weight;
  if (o.cfg_scale) g.cfg_scale = *o.cfg_scale;
  if (o.update_target) g.update_target = parse_update_target(*o.update_target);
  g.validate();
  return g;
}

}  // namespace

int run_sample(const SampleOptions& o) {
  const Method method = parse_method(o.method);
  const GuidanceConfig guidance = resolve_guidance(o);
  const Checkpoint ckpt = load_checkpoint_or_fail(o.checkpoint);
  const Denoiser<float> model(ckpt);
  const PromptSpec prompt = PromptSpec::encode(o.prompt, model.vocab());

  const auto res = model.attention_resolutions();
  const int working = *std::max_element(res.begin(), res.end());
  std::optional<SegmentSpec> segments;
  if (!o.segments.empty()) {
    segments = load_segment_file(o.segments, prompt, model.vocab(), working);
  } else if (method_uses_segments(method) || o.trace) {
    throw InputError("--method " + o.method + (o.trace ? " with --trace" : "") + " needs --segments");
  }
  // Segments still drive the trace of an unguided run, but never its sampling.
  std::optional<SegmentSpec> used = method_uses_segments(method) || o.trace ? segments : std::nullopt;
  GuidanceConfig g = guidance;
  if (!method_uses_segments(method)) {
    g.eta = 0.0;
    g.pww_weight = 0.0;
  }

  SamplerConfig sc;
  sc.seed = o.seed;
  if (o.steps) sc.steps = *o.steps;
  zestdiff::SampleOptions so;
  so.trace = o.trace;
  const auto result = sample(model, prompt, used, g, sc, so);

  RunManifest m;
  m.command = "sample";
  nlohmann::json guidance_json = g;
  m.config = {{"prompt", o.prompt},  {"method", o.method}, {"guidance", guidance_json},
              {"steps", sc.steps},   {"segments", o.segments}, {"trace", o.trace}};
  m.seed = o.seed;
  m.checkpoint_hash = ckpt.content_hash();
  std::vector<fs::path> inputs;
  if (!o.segments.empty()) inputs.push_back(o.segments);
  m.input_hash = inputs_hash(m.config, inputs);

  const fs::path image_path = output_path(o.out, ".ppm");
  write_ppm(image_path, result.image);
  m.outputs.push_back(image_path.string());
  if (o.trace) {
    const fs::path trace_path = output_path(o.out, ".trace.ntc");
    attention_trace(result.trace.entries).save(trace_path);
    std::vector<Image8> frames;
    std::vector<int> colors;
    for (const auto& text : segments->texts) {
      int idx = -1;
      std::istringstream is(text);
      for (std::string w; idx < 0 && is >> w;) idx = Palette::standard().object_index(w);
      colors.push_back(idx < 0 ? static_cast<int>(colors.size()) : idx);
    }
    for (const auto& e : result.trace.entries) frames.push_back(upscale(estimate_overlay(e.estimates, colors), 2));
    const fs::path strip_path = output_path(o.out, ".trace.ppm");
    write_ppm(strip_path, hstack(frames, 1));
    m.outputs.push_back(trace_path.string());
    m.outputs.push_back(strip_path.string());
    if (!result.trace.entries.empty()) m.metrics["final_loss"] = result.trace.entries.back().loss;
  }
  m.metrics["guided_steps"] = result.trace.backward_passes;
  m.save(output_path(o.out, ".manifest.json"));
  std::cout << image_path.string() << '\n';
  return 0;
}

}  // namespace zestdiff::cli

#include <iostream>
#include <sstream>

#include "common.hpp"
#include "zestdiff/harness.hpp"
#include "zestdiff/ntc.hpp"
#include "zestdiff/ops.hpp"
#include "zestdiff/rng.hpp"
#include "zestdiff/schedule.hpp"
#include "zestdiff/segment_file.hpp"

namespace zestdiff::cli {

namespace fs = std::filesystem;

int run_probe(const ProbeOptions& o) {
  const Checkpoint ckpt = load_checkpoint_or_fail(o.checkpoint);
  const Denoiser<float> model(ckpt);
  const auto& cfg = model.config();
  if (o.t < 1 || o.t > model.schedule().T) {
    throw InputError("--t must lie in [1, " + std::to_string(model.schedule().T) + "]");
  }
  const PromptSpec prompt = PromptSpec::encode(o.prompt, model.vocab());
  std::vector<std::vector<std::int64_t>> class_ids;
  for (const auto& c : o.classes) class_ids.push_back(PromptSpec::encode(c, model.vocab()).tokens);

  Rng rng(o.seed);
  TensorF noise = rng.normal_tensor<float>({1, cfg.in_channels, cfg.image_size, cfg.image_size});
  TensorF x_t = noise;
  if (!o.image.empty()) {
    const Image8 img = read_pnm(o.image);
    if (img.channels != 3 || img.width != cfg.image_size || img.height != cfg.image_size) {
      throw InputError("--image must be a " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                       " RGB PPM");
    }
    x_t = add_noise(reshape(image_to_tensor<float>(img), {1, 3, cfg.image_size, cfg.image_size}), o.t, noise,
                    model.schedule());
  }

  NoGradGuard no_grad;
  UNetForwardOptions<float> extra;
  extra.probe_context = model.unet().encode_pooled(class_ids);
  const auto pred = model.predict_noise(x_t, o.t, prompt, false, extra);
  const TensorF maps = pooled_class_maps(pred.probe, LayerFilter::all);

  NtcFile file;
  file.put("class_maps", maps);
  const fs::path ntc_path = output_path(o.out, ".ntc");
  file.save(ntc_path);

  std::vector<int> colors;
  for (const auto& c : o.classes) {
    int idx = -1;
    std::istringstream is(c);
    for (std::string w; idx < 0 && is >> w;) idx = Palette::standard().object_index(w);
    colors.push_back(idx < 0 ? static_cast<int>(colors.size()) : idx);
  }
  const fs::path overlay_path = output_path(o.out, ".ppm");
  write_ppm(overlay_path, upscale(estimate_overlay(maps, colors), 2));

  RunManifest m;
  m.command = "probe";
  m.seed = o.seed;
  m.config = {{"prompt", o.prompt}, {"classes", o.classes}, {"image", o.image}, {"t", o.t}};
  m.checkpoint_hash = ckpt.content_hash();
  std::vector<fs::path> inputs;
  if (!o.image.empty()) inputs.push_back(o.image);
  m.input_hash = inputs_hash(m.config, inputs);
  m.outputs = {ntc_path.string(), overlay_path.string()};
  const auto H = maps.dim(1), W = maps.dim(2);
  auto d = maps.data();
  for (size_t k = 0; k < o.classes.size(); ++k) {
    double mass = 0.0;
    for (std::int64_t i = 0; i < H * W; ++i) mass += d[k * static_cast<size_t>(H * W) + static_cast<size_t>(i)];
    m.metrics["mean_probability"][o.classes[k]] = mass / static_cast<double>(H * W);
    std::cout << o.classes[k] << ": mean probability " << mass / static_cast<double>(H * W) << '\n';
  }
  m.save(output_path(o.out, ".manifest.json"));
  return 0;
}

int run_scene(const SceneCommandOptions& o) {
  if (o.index < 0) throw InputError("--index must be >= 0");
  const Scene scene = scene_for_index(o.seed, static_cast<std::uint64_t>(o.index));
  const fs::path json = write_segment_file(o.out, scene);
  write_ppm(fs::path(o.out) / "scene.ppm", scene.image);
  std::cout << scene.caption_text() << '\n' << json.string() << '\n';
  return 0;
}

}  // namespace zestdiff::cli

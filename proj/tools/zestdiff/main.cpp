#include <CLI11.hpp>
#include <iostream>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "zestdiff/errors.hpp"

using namespace zestdiff::cli;

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot layout guidance for a toy text-to-image diffusion model"};
  app.require_subcommand(1);

  DatasetOptions dataset;
  auto* c_dataset = app.add_subcommand("dataset", "Render a shapes dataset (images, masks, captions)");
  c_dataset->add_option("--out", dataset.out, "Output directory")->required();
  c_dataset->add_option("--n", dataset.n, "Number of scenes");
  c_dataset->add_option("--seed", dataset.seed, "Scene seed");

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Train the denoiser from a JSON config");
  c_train->add_option("config", train.config, "Training config (JSON)")->required();
  c_train->add_option("--resume", train.resume, "Checkpoint to resume from");

  SampleOptions sample;
  auto* c_sample = app.add_subcommand("sample", "Generate an image, optionally guided by segment masks");
  c_sample->add_option("--checkpoint", sample.checkpoint, "Model checkpoint (NTC)")->required();
  c_sample->add_option("--prompt", sample.prompt, "Prompt text")->required();
  c_sample->add_option("--segments", sample.segments, "Segment file (JSON with PGM mask references)");
  c_sample->add_option("--method", sample.method, "none | pww | zest | zest+pww")
      ->check(CLI::IsMember({"none", "pww", "zest", "zest+pww"}));
  c_sample->add_option("--eta", sample.eta, "Guidance step size");
  c_sample->add_option("--tau", sample.tau, "Fraction of steps with guidance");
  c_sample->add_option("--norm", sample.norm, "Gradient normalisation: none | L1 | L2 | Linf");
  c_sample->add_option("--loss", sample.loss, "Loss: bce | combined");
  c_sample->add_option("--layers", sample.layers, "Attention layer filter");
  c_sample->add_option("--averaging", sample.averaging, "global | per-layer | per-head");
  c_sample->add_option("--pww-weight", sample.pww_weight, "Attention bias weight W");
  c_sample->add_option("--cfg-scale", sample.cfg_scale, "Classifier-free guidance scale");
  c_sample->add_option("--update-target", sample.update_target, "Gradient step on: noise | sample");
  c_sample->add_option("--steps", sample.steps, "DDIM steps");
  c_sample->add_option("--seed", sample.seed, "Noise seed");
  c_sample->add_option("--out", sample.out, "Output path prefix");
  c_sample->add_flag("--trace", sample.trace, "Write the per-step segment trace and overlay strip");

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Benchmark a method on generated shapes scenes");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Model checkpoint (NTC)");
  c_eval->add_option("--method", eval.method, "none | pww | zest | zest+pww")
      ->check(CLI::IsMember({"none", "pww", "zest", "zest+pww"}));
  c_eval->add_option("--n", eval.n, "Number of scenes");
  c_eval->add_option("--seed", eval.seed, "Scene seed");
  c_eval->add_option("--guidance", eval.guidance, "Guidance config JSON overriding method defaults");
  c_eval->add_option("--out", eval.out, "Metrics JSON path (default: stdout only)");
  c_eval->add_flag("--ground-truth", eval.ground_truth, "Score the rendered scenes themselves (pipeline check)");

  AblateOptions ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Sweep one guidance setting and report mIoU per value");
  c_ablate->add_option("--checkpoint", ablate.checkpoint, "Model checkpoint (NTC)")->required();
  c_ablate->add_option("--axis", ablate.axis, "tau | norm_mode | layer_filter | averaging | loss_mode | method")
      ->required();
  c_ablate->add_option("--values", ablate.values, "Grid values (default: the standard grid for the axis)")
      ->delimiter(',');
  c_ablate->add_option("--n", ablate.n, "Number of scenes");
  c_ablate->add_option("--seed", ablate.seed, "Scene seed");
  c_ablate->add_option("--out", ablate.out, "Output prefix for report JSON and plot");

  ProbeOptions probe;
  auto* c_probe = app.add_subcommand("probe", "Per-class attention maps from pooled class keys");
  c_probe->add_option("--checkpoint", probe.checkpoint, "Model checkpoint (NTC)")->required();
  c_probe->add_option("--prompt", probe.prompt, "Prompt for the forward pass")->required();
  c_probe->add_option("--classes", probe.classes, "Class texts, comma separated")->delimiter(',')->required();
  c_probe->add_option("--image", probe.image, "Clean PPM image to noise (default: pure noise)");
  c_probe->add_option("--t", probe.t, "Timestep");
  c_probe->add_option("--seed", probe.seed, "Noise seed");
  c_probe->add_option("--out", probe.out, "Output prefix");

  SceneCommandOptions scene;
  auto* c_scene = app.add_subcommand("scene", "Render one benchmark scene and write its segment file");
  c_scene->add_option("--seed", scene.seed, "Scene seed");
  c_scene->add_option("--index", scene.index, "Scene index");
  c_scene->add_option("--out", scene.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_dataset) return run_dataset(dataset);
    if (*c_train) return run_train(train);
    if (*c_sample) return run_sample(sample);
    if (*c_eval) return run_eval(eval);
    if (*c_ablate) return run_ablate(ablate);
    if (*c_probe) return run_probe(probe);
    if (*c_scene) return run_scene(scene);
  } catch (const zestdiff::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

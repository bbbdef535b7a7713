#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "commands.hpp"
#include "zestdiff/dataset.hpp"
#include "zestdiff/manifest.hpp"
#include "zestdiff/train.hpp"

namespace zestdiff::cli {

namespace fs = std::filesystem;

int run_dataset(const DatasetOptions& o) {
  if (o.n < 1) throw InputError("dataset: --n must be >= 1");
  const Vocabulary vocab;
  const auto summary = build_dataset(o.out, o.n, o.seed, vocab);
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << '\n';
  RunManifest m;
  m.command = "dataset";
  m.config = {{"n", o.n}, {"out", o.out}};
  m.seed = o.seed;
  m.input_hash = fnv1a_hex(m.config.dump());
  m.outputs = {(fs::path(o.out) / "images.ntc").string(), (fs::path(o.out) / "captions.jsonl").string(),
               (fs::path(o.out) / "masks").string()};
  m.metrics = {{"n_train", summary.n_train}, {"n_val", summary.n_val}, {"reseeds", summary.reseeds}};
  m.save(fs::path(o.out) / "manifest.json");
  std::cout << "wrote " << summary.n_train << " train + " << summary.n_val << " val scenes to " << o.out << '\n';
  return 0;
}

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void save_atomic(const Checkpoint& ckpt, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  ckpt.save(tmp);
  fs::rename(tmp, path);
}

}  // namespace

int run_train(const TrainOptions& o) {
  const nlohmann::json cfg = read_json_file(o.config);
  if (!cfg.is_object()) throw InputError("train config must be a JSON object");
  const fs::path dataset_dir = cfg.value("dataset", std::string());
  const fs::path out_dir = cfg.value("output", std::string("runs/train"));
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
  const std::int64_t checkpoint_every = cfg.value("checkpoint_every", std::int64_t{500});
  TrainConfig tc;
  try {
    tc = cfg.value("train", nlohmann::json::object()).get<TrainConfig>();
    tc.validate();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid train config: ") + e.what());
  }
  if (dataset_dir.empty() || !fs::exists(dataset_dir / "images.ntc")) {
    throw InputError("dataset not found at '" + dataset_dir.string() + "' (run `zestdiff dataset` first)");
  }
  const Vocabulary vocab;
  const Dataset data = load_dataset(dataset_dir, vocab);

  std::optional<Checkpoint> resume;
  std::string resume_path = o.resume.empty() ? cfg.value("resume", std::string()) : o.resume;
  if (!resume_path.empty()) resume = Checkpoint::load(resume_path);

  fs::create_directories(out_dir);
  const fs::path ckpt_path = out_dir / "checkpoint.ntc";
  const fs::path log_path = out_dir / "train_log.csv";
  const bool append = resume.has_value() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!append) log << "step,loss,lr,val_loss\n";

  TrainHooks hooks;
  hooks.checkpoint_every = checkpoint_every;
  hooks.on_step = [&](const TrainProgress& p) {
    char line[128];
    std::snprintf(line, sizeof line, "%lld,%.6g,%.6g,", static_cast<long long>(p.step), p.loss, p.lr);
    log << line;
    if (p.val_loss) log << *p.val_loss;
    log << '\n';
    if (p.step % 50 == 0 || p.val_loss) {
      log.flush();
      std::cerr << "step " << p.step << " loss " << p.loss << " lr " << p.lr;
      if (p.val_loss) std::cerr << " val " << *p.val_loss;
      std::cerr << std::endl;
    }
  };
  hooks.on_checkpoint = [&](const Checkpoint& c) { save_atomic(c, ckpt_path); };

  Checkpoint final_ckpt;
  try {
    final_ckpt = train(data, tc, seed, hooks, resume);
  } catch (const TrainingDiverged& e) {
    save_atomic(e.last_good(), out_dir / "last_good.ntc");
    std::cerr << e.what() << "; last good weights saved to " << (out_dir / "last_good.ntc").string() << '\n';
    throw;
  }
  save_atomic(final_ckpt, ckpt_path);

  RunManifest m;
  m.command = "train";
  m.config = cfg;
  m.seed = seed;
  m.checkpoint_hash = final_ckpt.content_hash();
  m.input_hash = fnv1a_hex(cfg.dump() + file_hash(dataset_dir / "images.ntc") + file_hash(dataset_dir / "captions.jsonl"));
  m.outputs = {ckpt_path.string(), log_path.string()};
  m.metrics = {{"steps", final_ckpt.meta.steps}, {"val_loss", validation_loss(final_ckpt, data, seed)}};
  m.save(out_dir / "manifest.json");
  std::cout << "checkpoint " << ckpt_path.string() << " (" << m.checkpoint_hash << ")\n";
  return 0;
}

}  // namespace zestdiff::cli

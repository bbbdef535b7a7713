#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace zestdiff::cli {

/// Bad flags, files or configuration. Maps to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetOptions {
  std::string out;
  std::int64_t n = 10000;
  std::uint64_t seed = 7;
};

struct TrainOptions {
  std::string config;
  std::string resume;
};

struct SampleOptions {
  std::string checkpoint;
  std::string prompt;
  std::string segments;
  std::string method = "zest+pww";
  std::optional<double> eta;
  std::optional<double> tau;
  std::optional<std::string> norm;
  std::optional<std::string> loss;
  std::optional<std::string> layers;
  std::optional<std::string> averaging;
  std::optional<double> pww_weight;
  std::optional<double> cfg_scale;
  std::optional<std::string> update_target;
  std::optional<int> steps;
  std::uint64_t seed = 0;
  std::string out = "sample";
  bool trace = false;
};

struct EvalOptions {
  std::string checkpoint;
  std::string method = "zest+pww";
  int n = 200;
  std::uint64_t seed = 1234;
  std::string out;
  std::string guidance;  // optional GuidanceConfig JSON overriding the method defaults
  bool ground_truth = false;
};

struct AblateOptions {
  std::string checkpoint;
  std::string axis;
  std::vector<std::string> values;
  int n = 200;
  std::uint64_t seed = 1234;
  std::string out = "ablation";
};

struct ProbeOptions {
  std::string checkpoint;
  std::string prompt;
  std::vector<std::string> classes;
  std::string image;
  int t = 500;
  std::uint64_t seed = 0;
  std::string out = "probe";
};

struct SceneCommandOptions {
  std::uint64_t seed = 1234;
  std::int64_t index = 0;
  std::string out = "scene";
};

int run_dataset(const DatasetOptions& o);
int run_train(const TrainOptions& o);
int run_sample(const SampleOptions& o);
int run_eval(const EvalOptions& o);
int run_ablate(const AblateOptions& o);
int run_probe(const ProbeOptions& o);
int run_scene(const SceneCommandOptions& o);

}  // namespace zestdiff::cli

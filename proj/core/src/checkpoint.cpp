#include "zestdiff/checkpoint.hpp"

#include <cstdio>
#include <stdexcept>

namespace zestdiff {

std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fnv1a_hex(const std::string& text) {
  return fnv1a_hex(std::vector<std::uint8_t>(text.begin(), text.end()));
}

Checkpoint Checkpoint::initial(const DenoiserConfig& config, const NoiseSchedule& schedule, std::uint64_t seed) {
  Checkpoint c;
  c.config = config;
  c.schedule = schedule;
  c.meta.seed = seed;
  if (c.vocab.size() > config.vocab_size) {
    throw std::invalid_argument("checkpoint: vocabulary has " + std::to_string(c.vocab.size()) +
                                " words but the model embeds only " + std::to_string(config.vocab_size));
  }
  UNet<float> net(config, seed);
  c.params = net.params();
  return c;
}

NtcFile Checkpoint::to_ntc() const {
  NtcFile f;
  for (const auto& [name, t] : params) f.put("param/" + name, t);
  for (const auto& [name, m] : optimizer.m) {
    f.put("adam_m/" + name, TensorF::from_data({static_cast<std::int64_t>(m.size())}, m));
  }
  for (const auto& [name, v] : optimizer.v) {
    f.put("adam_v/" + name, TensorF::from_data({static_cast<std::int64_t>(v.size())}, v));
  }
  f.put("schedule/alpha", TensorD::from_data({static_cast<std::int64_t>(schedule.alpha.size())}, schedule.alpha));
  f.metadata() = {{"format", "zestdiff-checkpoint"},
                  {"version", 1},
                  {"config", config},
                  {"schedule", {{"T", schedule.T}, {"kind", schedule_kind_name(schedule.kind)}}},
                  {"vocab", vocab.words()},
                  {"training", {{"steps", meta.steps}, {"seed", meta.seed}, {"extra", meta.extra}}},
                  {"optimizer_step", optimizer.step}};
  return f;
}

Checkpoint Checkpoint::from_ntc(const NtcFile& f) {
  const auto& md = f.metadata();
  if (md.value("format", std::string()) != "zestdiff-checkpoint") {
    throw std::runtime_error("not a zestdiff checkpoint");
  }
  Checkpoint c;
  c.config = md.at("config").get<DenoiserConfig>();
  c.config.validate();
  c.schedule = make_schedule(md.at("schedule").at("T").get<int>(),
                             parse_schedule_kind(md.at("schedule").at("kind").get<std::string>()));
  const auto alpha = f.get<double>("schedule/alpha");
  if (std::vector<double>(alpha.data().begin(), alpha.data().end()) != c.schedule.alpha) {
    throw std::runtime_error("checkpoint: stored noise schedule does not match its declared kind");
  }
  c.vocab = Vocabulary(md.at("vocab").get<std::vector<std::string>>());
  const auto& tr = md.at("training");
  c.meta.steps = tr.at("steps").get<std::int64_t>();
  c.meta.seed = tr.at("seed").get<std::uint64_t>();
  c.meta.extra = tr.value("extra", nlohmann::json::object());
  c.optimizer.step = md.value("optimizer_step", std::int64_t{0});
  for (const auto& name : f.names()) {
    auto strip = [&](const std::string& prefix) { return name.substr(prefix.size()); };
    if (name.rfind("param/", 0) == 0) {
      c.params[strip("param/")] = f.get<float>(name);
    } else if (name.rfind("adam_m/", 0) == 0) {
      auto t = f.get<float>(name);
      c.optimizer.m[strip("adam_m/")] = std::vector<float>(t.data().begin(), t.data().end());
    } else if (name.rfind("adam_v/", 0) == 0) {
      auto t = f.get<float>(name);
      c.optimizer.v[strip("adam_v/")] = std::vector<float>(t.data().begin(), t.data().end());
    }
  }
  UNet<float> check(c.config, c.params);  // validates names and shapes
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { to_ntc().save(path); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return from_ntc(NtcFile::load(path)); }

std::string Checkpoint::content_hash() const { return fnv1a_hex(to_ntc().serialize()); }

template <typename T>
UNet<T> make_unet(const Checkpoint& ckpt) {
  std::map<std::string, Tensor<T>> params;
  for (const auto& [name, t] : ckpt.params) {
    std::vector<T> v(t.data().begin(), t.data().end());
    params[name] = Tensor<T>::from_data(t.shape(), std::move(v));
  }
  return UNet<T>(ckpt.config, std::move(params));
}

template UNet<float> make_unet<float>(const Checkpoint&);
template UNet<double> make_unet<double>(const Checkpoint&);

}  // namespace zestdiff

#include "zestdiff/denoiser.hpp"

#include <algorithm>
#include <stdexcept>

namespace zestdiff {

template <typename T>
Denoiser<T>::Denoiser(const Checkpoint& ckpt) : Denoiser(make_unet<T>(ckpt), ckpt.schedule, ckpt.vocab) {}

template <typename T>
Denoiser<T>::Denoiser(UNet<T> net, NoiseSchedule schedule, Vocabulary vocab)
    : net_(std::move(net)), schedule_(std::move(schedule)), vocab_(std::move(vocab)) {
  net_.set_requires_grad(false);
  if (vocab_.size() > net_.config().vocab_size) throw std::invalid_argument("denoiser: vocabulary larger than the embedding table");
}

template <typename T>
std::vector<int> Denoiser<T>::attention_resolutions() const {
  std::vector<int> out;
  for (const auto& l : net_.attention_layers()) {
    if (std::find(out.begin(), out.end(), l.resolution) == out.end()) out.push_back(l.resolution);
  }
  return out;
}

template <typename T>
Tensor<T> Denoiser<T>::context(const std::optional<PromptSpec>& prompt) const {
  const PromptSpec p = prompt ? *prompt : PromptSpec::null_prompt(vocab_);
  return net_.encode_text({p.padded(vocab_, net_.config().context_len)});
}

template <typename T>
NoisePrediction<T> Denoiser<T>::predict_noise(const Tensor<T>& x_t, int t, const std::optional<PromptSpec>& prompt,
                                              bool capture, const UNetForwardOptions<T>& extra) const {
  if (x_t.ndim() != 4 || x_t.dim(0) != 1) {
    throw std::invalid_argument("predict_noise: expected x_t of shape (1, C, H, W), got " + shape_str(x_t.shape()));
  }
  if (t < 0 || t > schedule_.T) throw std::out_of_range("predict_noise: timestep " + std::to_string(t) + " out of range");
  UNetForwardOptions<T> options = extra;
  options.capture = capture;
  auto out = net_.forward(x_t, {t}, context(prompt), options);
  NoisePrediction<T> pred;
  pred.eps = out.eps;
  if (capture) pred.records = split_heads(out.attention, 0);
  pred.layers = std::move(out.attention);
  pred.probe = std::move(out.probe);
  return pred;
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace zestdiff

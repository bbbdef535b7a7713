#include "zestdiff/unet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "zestdiff/ops.hpp"
#include "zestdiff/rng.hpp"

namespace zestdiff {

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("denoiser config: " + m); };
  if (image_size < 4 || (image_size & (image_size - 1)) != 0) fail("image_size must be a power of two >= 4");
  if (in_channels < 1 || base_channels < 1) fail("channel counts must be positive");
  if (channel_mult.empty()) fail("channel_mult must not be empty");
  if ((image_size >> (channel_mult.size() - 1)) < 2) fail("too many resolution levels for the image size");
  if (heads < 1 || head_dim < 1 || time_dim < 2 || time_dim % 2 != 0 || text_dim < 1) fail("invalid widths");
  if (context_len < 1 || context_len > kMaxPromptTokens) fail("context_len must be in [1, 16]");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  std::vector<int> distinct(attention_resolutions);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2 || heads < 2) fail("need at least two attention resolutions with >= 2 heads each");
  for (int r : attention_resolutions) {
    bool ok = false;
    for (size_t l = 0; l < channel_mult.size(); ++l) ok = ok || resolution(static_cast<int>(l)) == r;
    if (!ok) fail("attention resolution " + std::to_string(r) + " is not a U-Net level");
  }
  for (size_t l = 0; l < channel_mult.size(); ++l) {
    const int c = channels(static_cast<int>(l));
    if (c % groups != 0) fail("channel count " + std::to_string(c) + " not divisible by groups");
  }
}

bool DenoiserConfig::has_attention(int level) const {
  const int r = resolution(level);
  for (int a : attention_resolutions) {
    if (a == r) return true;
  }
  return false;
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"in_channels", c.in_channels},
                     {"base_channels", c.base_channels},
                     {"channel_mult", c.channel_mult},
                     {"attention_resolutions", c.attention_resolutions},
                     {"heads", c.heads},
                     {"head_dim", c.head_dim},
                     {"time_dim", c.time_dim},
                     {"text_dim", c.text_dim},
                     {"context_len", c.context_len},
                     {"groups", c.groups},
                     {"vocab_size", c.vocab_size}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  DenoiserConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.channel_mult = j.value("channel_mult", d.channel_mult);
  c.attention_resolutions = j.value("attention_resolutions", d.attention_resolutions);
  c.heads = j.value("heads", d.heads);
  c.head_dim = j.value("head_dim", d.head_dim);
  c.time_dim = j.value("time_dim", d.time_dim);
  c.text_dim = j.value("text_dim", d.text_dim);
  c.context_len = j.value("context_len", d.context_len);
  c.groups = j.value("groups", d.groups);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
}

template <typename T>
std::vector<AttentionRecord<T>> split_heads(const std::vector<LayerAttention<T>>& layers, int batch_index, int step) {
  std::vector<AttentionRecord<T>> out;
  for (const auto& la : layers) {
    const auto sample = select(la.maps, 0, batch_index);  // (heads, HW, N)
    for (int h = 0; h < sample.dim(0); ++h) out.push_back({la.layer, h, step, select(sample, 0, h)});
  }
  return out;
}

template <typename T>
UNet<T>::UNet(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  auto normal = [&](const std::string& name, Shape shape, double stddev) {
    params_[name] = rng.normal_tensor<T>(std::move(shape), stddev);
    params_[name].set_requires_grad(true);
  };
  auto constant = [&](const std::string& name, Shape shape, T v) { params_[name] = Tensor<T>::full(std::move(shape), v, true); };
  auto conv = [&](const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k, double gain = 1.0) {
    normal(name + ".w", {cout, cin, k, k}, gain / std::sqrt(static_cast<double>(cin * k * k)));
    constant(name + ".b", {cout}, T(0));
  };
  auto lin = [&](const std::string& name, std::int64_t in, std::int64_t out, bool bias = true) {
    normal(name + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    if (bias) constant(name + ".b", {out}, T(0));
  };
  auto gn = [&](const std::string& name, std::int64_t c) {
    constant(name + ".g", {c}, T(1));
    constant(name + ".b", {c}, T(0));
  };
  const std::int64_t td = config_.time_dim;
  auto res = [&](const std::string& name, std::int64_t cin, std::int64_t cout) {
    gn(name + ".gn1", cin);
    conv(name + ".conv1", cin, cout, 3);
    lin(name + ".temb", td, cout);
    gn(name + ".gn2", cout);
    conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) conv(name + ".skip", cin, cout, 1);
  };
  const std::int64_t inner = static_cast<std::int64_t>(config_.heads) * config_.head_dim;
  auto attn = [&](const std::string& name, std::int64_t c) {
    gn(name + ".gn", c);
    lin(name + ".q", c, inner, false);
    lin(name + ".k", config_.text_dim, inner, false);
    lin(name + ".v", config_.text_dim, inner, false);
    lin(name + ".o", inner, c);
  };

  normal("text.table", {config_.vocab_size, config_.text_dim}, 1.0);
  normal("text.pos", {config_.context_len, config_.text_dim}, 0.1);
  lin("time.lin1", td, td);
  lin("time.lin2", td, td);

  const int L = static_cast<int>(config_.channel_mult.size());
  conv("conv_in", config_.in_channels, config_.channels(0), 3);
  std::int64_t ch = config_.channels(0);
  for (int l = 0; l < L; ++l) {
    const std::int64_t c = config_.channels(l);
    res("enc" + std::to_string(l) + ".res", ch, c);
    if (config_.has_attention(l)) attn("enc" + std::to_string(l) + ".attn", c);
    ch = c;
    if (l + 1 < L) {
      conv("down" + std::to_string(l), c, config_.channels(l + 1), 3);
      ch = config_.channels(l + 1);
    }
  }
  res("mid.res", ch, ch);
  for (int l = L - 1; l >= 0; --l) {
    const std::int64_t c = config_.channels(l);
    res("dec" + std::to_string(l) + ".res", ch + c, c);
    if (config_.has_attention(l)) attn("dec" + std::to_string(l) + ".attn", c);
    ch = c;
    if (l > 0) {
      conv("up" + std::to_string(l), c, config_.channels(l - 1), 3);
      ch = config_.channels(l - 1);
    }
  }
  gn("out.gn", ch);
  conv("out.conv", ch, config_.in_channels, 3, 0.1);
}

template <typename T>
UNet<T>::UNet(DenoiserConfig config, std::map<std::string, Tensor<T>> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const UNet<T> reference(config_, 0);
  for (const auto& [name, t] : reference.params_) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw std::invalid_argument("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                                  shape_str(t.shape()));
    }
  }
  if (params_.size() != reference.params_.size()) throw std::invalid_argument("checkpoint has unexpected parameters");
}

template <typename T>
std::int64_t UNet<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void UNet<T>::set_requires_grad(bool on) {
  for (auto& [_, t] : params_) t.set_requires_grad(on);
}

template <typename T>
std::vector<LayerInfo> UNet<T>::attention_layers() const {
  std::vector<LayerInfo> out;
  const int L = static_cast<int>(config_.channel_mult.size());
  for (int l = 0; l < L; ++l) {
    if (config_.has_attention(l)) {
      out.push_back({static_cast<int>(out.size()), config_.resolution(l), UNetPart::encoder, "enc" + std::to_string(l)});
    }
  }
  for (int l = L - 1; l >= 0; --l) {
    if (config_.has_attention(l)) {
      out.push_back({static_cast<int>(out.size()), config_.resolution(l), UNetPart::decoder, "dec" + std::to_string(l)});
    }
  }
  return out;
}

template <typename T>
const Tensor<T>& UNet<T>::p(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::logic_error("unet: missing parameter " + name);
  return it->second;
}

template <typename T>
Tensor<T> UNet<T>::linear(const Tensor<T>& x, const std::string& prefix) const {
  auto y = matmul(x, p(prefix + ".w"));
  auto it = params_.find(prefix + ".b");
  return it == params_.end() ? y : add(y, it->second);
}

template <typename T>
int UNet<T>::group_count(std::int64_t channels) const {
  int g = config_.groups;
  while (g > 1 && channels % g != 0) --g;
  return g;
}

template <typename T>
Tensor<T> UNet<T>::encode_text(const std::vector<std::vector<std::int64_t>>& padded_ids) const {
  if (padded_ids.empty()) throw std::invalid_argument("encode_text: empty batch");
  std::vector<std::int64_t> flat;
  for (const auto& ids : padded_ids) {
    if (static_cast<int>(ids.size()) != config_.context_len) {
      throw std::invalid_argument("encode_text: expected " + std::to_string(config_.context_len) + " ids per prompt, got " +
                                  std::to_string(ids.size()));
    }
    flat.insert(flat.end(), ids.begin(), ids.end());
  }
  const auto B = static_cast<std::int64_t>(padded_ids.size());
  auto tok = reshape(embedding(p("text.table"), flat), {B, config_.context_len, config_.text_dim});
  return add(tok, p("text.pos"));
}

template <typename T>
Tensor<T> UNet<T>::encode_pooled(const std::vector<std::vector<std::int64_t>>& class_ids) const {
  if (class_ids.empty()) throw std::invalid_argument("encode_pooled: no class texts");
  std::vector<Tensor<T>> rows;
  for (const auto& ids : class_ids) {
    if (ids.empty() || static_cast<int>(ids.size()) > config_.context_len) {
      throw std::invalid_argument("encode_pooled: class text must have 1.." + std::to_string(config_.context_len) + " tokens");
    }
    auto tok = embedding(p("text.table"), ids);  // (n, D)
    std::vector<std::int64_t> pos_ids(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) pos_ids[i] = static_cast<std::int64_t>(i);
    auto pos = embedding(p("text.pos"), pos_ids);
    rows.push_back(reshape(mean_axis(add(tok, pos), 0), {1, config_.text_dim}));
  }
  auto pooled = concat(rows, 0);
  return reshape(pooled, {1, static_cast<std::int64_t>(class_ids.size()), config_.text_dim});
}

template <typename T>
Tensor<T> UNet<T>::time_embedding(const std::vector<int>& t) const {
  const int half = config_.time_dim / 2;
  std::vector<T> v(t.size() * static_cast<size_t>(config_.time_dim));
  for (size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double a = static_cast<double>(t[b]) * freq;
      v[b * config_.time_dim + i] = static_cast<T>(std::sin(a));
      v[b * config_.time_dim + half + i] = static_cast<T>(std::cos(a));
    }
  }
  auto e = Tensor<T>::from_data({static_cast<std::int64_t>(t.size()), config_.time_dim}, std::move(v));
  return linear(silu(linear(e, "time.lin1")), "time.lin2");
}

template <typename T>
Tensor<T> UNet<T>::res_block(const std::string& prefix, const Tensor<T>& x, const Tensor<T>& temb) const {
  const auto cin = x.dim(1);
  auto h = silu(group_norm(x, p(prefix + ".gn1.g"), p(prefix + ".gn1.b"), group_count(cin)));
  h = conv2d(h, p(prefix + ".conv1.w"), p(prefix + ".conv1.b"), 1, 1);
  h = add_channel_bias(h, linear(silu(temb), prefix + ".temb"));
  const auto cout = h.dim(1);
  h = silu(group_norm(h, p(prefix + ".gn2.g"), p(prefix + ".gn2.b"), group_count(cout)));
  h = conv2d(h, p(prefix + ".conv2.w"), p(prefix + ".conv2.b"), 1, 1);
  auto skip = cin == cout ? x : conv2d(x, p(prefix + ".skip.w"), p(prefix + ".skip.b"), 1, 0);
  return add(skip, h);
}

template <typename T>
Tensor<T> UNet<T>::cross_attention(const std::string& prefix, const LayerInfo& info, const Tensor<T>& x,
                                   const Tensor<T>& context, const UNetForwardOptions<T>& options,
                                   UNetOutput<T>& out) const {
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), P = H * W;
  const std::int64_t heads = config_.heads, d = config_.head_dim;
  const std::int64_t N = context.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  auto h = group_norm(x, p(prefix + ".gn.g"), p(prefix + ".gn.b"), group_count(C));
  h = permute(reshape(h, {B, C, P}), {0, 2, 1});  // (B, P, C)
  auto q = permute(reshape(linear(h, prefix + ".q"), {B, P, heads, d}), {0, 2, 1, 3});
  auto k = permute(reshape(linear(context, prefix + ".k"), {B, N, heads, d}), {0, 2, 1, 3});
  auto v = permute(reshape(linear(context, prefix + ".v"), {B, N, heads, d}), {0, 2, 1, 3});

  auto logits = mul_scalar(matmul(q, k, false, true), scale);  // (B, heads, P, N)
  if (auto it = options.attention_bias.find(static_cast<int>(H)); it != options.attention_bias.end()) {
    logits = add(logits, it->second);
  }
  auto attn = softmax(logits, 3);
  if (options.capture) out.attention.push_back({info, attn});

  if (options.probe_context.defined()) {
    const std::int64_t K = options.probe_context.dim(1);
    auto kp = permute(reshape(linear(options.probe_context, prefix + ".k"), {1, K, heads, d}), {0, 2, 1, 3});
    if (B != 1) throw std::invalid_argument("probe keys require batch size 1");
    out.probe.push_back({info, softmax(mul_scalar(matmul(q, kp, false, true), scale), 3)});
  }

  auto o = permute(matmul(attn, v), {0, 2, 1, 3});  // (B, P, heads, d)
  o = linear(reshape(o, {B, P, heads * d}), prefix + ".o");
  o = reshape(permute(o, {0, 2, 1}), {B, C, H, W});
  return add(x, o);
}

template <typename T>
UNetOutput<T> UNet<T>::forward(const Tensor<T>& x, const std::vector<int>& t, const Tensor<T>& context,
                               const UNetForwardOptions<T>& options) const {
  if (x.ndim() != 4 || x.dim(1) != config_.in_channels || x.dim(2) != config_.image_size ||
      x.dim(3) != config_.image_size) {
    throw std::invalid_argument("unet: input shape " + shape_str(x.shape()) + " does not match the configured image");
  }
  const std::int64_t B = x.dim(0);
  if (static_cast<std::int64_t>(t.size()) != B) throw std::invalid_argument("unet: need one timestep per sample");
  if (context.ndim() != 3 || context.dim(0) != B || context.dim(2) != config_.text_dim) {
    throw std::invalid_argument("unet: context shape " + shape_str(context.shape()) + " incompatible with batch " +
                                std::to_string(B));
  }

  UNetOutput<T> out;
  const auto layers = attention_layers();
  size_t attn_index = 0;
  const auto temb = time_embedding(t);
  const int L = static_cast<int>(config_.channel_mult.size());

  auto h = conv2d(x, p("conv_in.w"), p("conv_in.b"), 1, 1);
  std::vector<Tensor<T>> skips;
  for (int l = 0; l < L; ++l) {
    const std::string name = "enc" + std::to_string(l);
    h = res_block(name + ".res", h, temb);
    if (config_.has_attention(l)) h = cross_attention(name + ".attn", layers[attn_index++], h, context, options, out);
    skips.push_back(h);
    if (l + 1 < L) {
      const std::string down = "down" + std::to_string(l);
      h = conv2d(h, p(down + ".w"), p(down + ".b"), 2, 1);
    }
  }
  h = res_block("mid.res", h, temb);
  for (int l = L - 1; l >= 0; --l) {
    const std::string name = "dec" + std::to_string(l);
    h = res_block(name + ".res", concat<T>({h, skips[static_cast<size_t>(l)]}, 1), temb);
    if (config_.has_attention(l)) h = cross_attention(name + ".attn", layers[attn_index++], h, context, options, out);
    if (l > 0) {
      const std::string up = "up" + std::to_string(l);
      h = conv2d(upsample_nearest(h, 2), p(up + ".w"), p(up + ".b"), 1, 1);
    }
  }
  h = silu(group_norm(h, p("out.gn.g"), p("out.gn.b"), group_count(h.dim(1))));
  out.eps = conv2d(h, p("out.conv.w"), p("out.conv.b"), 1, 1);
  return out;
}

template class UNet<float>;
template class UNet<double>;
template std::vector<AttentionRecord<float>> split_heads(const std::vector<LayerAttention<float>>&, int, int);
template std::vector<AttentionRecord<double>> split_heads(const std::vector<LayerAttention<double>>&, int, int);

}  // namespace zestdiff

#include "zestdiff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace zestdiff {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const MatR<T>>;
template <typename T>
using MapM = Eigen::Map<MatR<T>>;

[[noreturn]] void shape_error(OpKind kind, const std::string& what, const Shape& a, const Shape& b = {}) {
  std::string msg = std::string(op_name(kind)) + ": " + what + " " + shape_str(a);
  if (!b.empty()) msg += " vs " + shape_str(b);
  throw std::invalid_argument(msg);
}

int normalize_axis(OpKind kind, int axis, std::int64_t ndim, const Shape& shape) {
  if (axis < 0) axis += static_cast<int>(ndim);
  if (axis < 0 || axis >= ndim) shape_error(kind, "axis " + std::to_string(axis) + " out of range for", shape);
  return axis;
}

template <typename T>
bool needs_grad(const std::vector<Tensor<T>>& inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
}

// Builds the output tensor and, when any input wants a gradient, records the node.
template <typename T, typename Backward>
Tensor<T> make_result(Shape shape, std::vector<T> data, OpKind kind, std::vector<Tensor<T>> inputs, OpAttrs attrs,
                      Backward&& bw) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (needs_grad(inputs)) {
    impl->requires_grad = true;
    auto node = std::make_shared<OpNode<T>>();
    node->kind = kind;
    node->inputs = std::move(inputs);
    node->attrs = std::move(attrs);
    node->backward = std::forward<Backward>(bw);
    impl->node = std::move(node);
  }
  return Tensor<T>(std::move(impl));
}

template <typename T>
bool wants(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

// ---- elementwise binary -------------------------------------------------

enum class Bcast { same, scalar, suffix };

Bcast classify(OpKind kind, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::same;
  if (shape_numel(b) == 1) return Bcast::scalar;
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    return Bcast::suffix;
  }
  shape_error(kind, "incompatible shapes", a, b);
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(OpKind kind, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const Bcast mode = classify(kind, a.shape(), b.shape());
  const auto n = a.numel();
  const auto nb = b.numel();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  std::vector<T> out(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t j = mode == Bcast::same ? i : (mode == Bcast::scalar ? 0 : i % nb);
    out[i] = f(pa[i], pb[j]);
  }
  return make_result(a.shape(), std::move(out), kind, {a, b}, {}, [a, b, mode, da, db](const TensorImpl<T>& o) {
    const auto n = a.numel();
    const auto nb = b.numel();
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    const T* g = o.grad.data();
    if (wants(a)) {
      std::vector<T> ga(static_cast<size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t j = mode == Bcast::same ? i : (mode == Bcast::scalar ? 0 : i % nb);
        ga[i] = g[i] * da(pa[i], pb[j]);
      }
      a.impl().accumulate_grad(ga);
    }
    if (wants(b)) {
      std::vector<T> gb(static_cast<size_t>(nb), T(0));
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t j = mode == Bcast::same ? i : (mode == Bcast::scalar ? 0 : i % nb);
        gb[j] += g[i] * db(pa[i], pb[j]);
      }
      b.impl().accumulate_grad(gb);
    }
  });
}

// Strides for a row-major shape.
std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

template <typename T>
std::vector<T> permute_data(std::span<const T> src, const Shape& shape, const std::vector<std::int64_t>& order) {
  const size_t nd = shape.size();
  const auto in_st = strides_of(shape);
  Shape out_shape(nd);
  std::vector<std::int64_t> step(nd);
  for (size_t i = 0; i < nd; ++i) {
    out_shape[i] = shape[order[i]];
    step[i] = in_st[order[i]];
  }
  std::vector<T> out(src.size());
  std::vector<std::int64_t> idx(nd, 0);
  std::int64_t off = 0;
  const std::int64_t inner = nd ? out_shape[nd - 1] : 1;
  const std::int64_t inner_step = nd ? step[nd - 1] : 1;
  for (size_t o = 0; o < out.size(); o += static_cast<size_t>(inner)) {
    for (std::int64_t k = 0; k < inner; ++k) out[o + k] = src[off + k * inner_step];
    // advance the multi-index over all but the last axis
    for (int ax = static_cast<int>(nd) - 2; ax >= 0; --ax) {
      off += step[ax];
      if (++idx[ax] < out_shape[ax]) break;
      off -= step[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh, std::int64_t kw,
            std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* cols) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          T* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh, std::int64_t kw,
            std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* x) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (c * H + iy) * W;
          const T* src = row + oy * Wo;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---- elementwise --------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      OpKind::add, a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      OpKind::sub, a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      OpKind::mul, a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      OpKind::div, a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += static_cast<T>(s);
  OpAttrs attrs;
  attrs.scalar = s;
  return make_result(a.shape(), std::move(out), OpKind::add_scalar, {a}, attrs,
                     [a](const TensorImpl<T>& o) { a.impl().accumulate_grad(o.grad); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, double s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  const T k = static_cast<T>(s);
  for (auto& v : out) v *= k;
  OpAttrs attrs;
  attrs.scalar = s;
  return make_result(a.shape(), std::move(out), OpKind::mul_scalar, {a}, attrs, [a, k](const TensorImpl<T>& o) {
    std::vector<T> g(o.grad.begin(), o.grad.end());
    for (auto& v : g) v *= k;
    a.impl().accumulate_grad(g);
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const auto xs = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] / (T(1) + std::exp(-xs[i]));
  return make_result(x.shape(), std::move(out), OpKind::silu, {x}, {}, [x](const TensorImpl<T>& o) {
    const auto xs = x.data();
    std::vector<T> g(xs.size());
    for (size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xs[i]));
      g[i] = o.grad[i] * s * (T(1) + xs[i] * (T(1) - s));
    }
    x.impl().accumulate_grad(g);
  });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::clamp(v, l, h);
  OpAttrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return make_result(x.shape(), std::move(out), OpKind::clamp, {x}, attrs, [x, l, h](const TensorImpl<T>& o) {
    const auto xs = x.data();
    std::vector<T> g(xs.size());
    for (size_t i = 0; i < g.size(); ++i) g[i] = (xs[i] >= l && xs[i] <= h) ? o.grad[i] : T(0);
    x.impl().accumulate_grad(g);
  });
}

// ---- linear algebra -----------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.ndim() < 2 || b.ndim() < 2) shape_error(OpKind::matmul, "operands must be at least 2-D", a.shape(), b.shape());
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::int64_t ar = as[as.size() - 2], ac = as.back();
  const std::int64_t br = bs[bs.size() - 2], bc = bs.back();
  const std::int64_t M = trans_a ? ac : ar, K = trans_a ? ar : ac;
  const std::int64_t Kb = trans_b ? bc : br, N = trans_b ? br : bc;
  if (K != Kb) shape_error(OpKind::matmul, "inner dimensions differ", as, bs);
  const bool shared_b = b.ndim() == 2;
  if (!shared_b && (b.ndim() != a.ndim() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
    shape_error(OpKind::matmul, "batch axes differ", as, bs);
  }
  std::int64_t batch = 1;
  for (size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<T> out(static_cast<size_t>(batch * M * N));

  const T* pa = a.data().data();
  const T* pb = b.data().data();
  const std::int64_t sa = ar * ac, sb = shared_b ? 0 : br * bc;
  if (shared_b && !trans_a) {
    MapC<T> A(pa, batch * M, K);
    MapM<T> C(out.data(), batch * M, N);
    if (trans_b)
      C.noalias() = A * MapC<T>(pb, br, bc).transpose();
    else
      C.noalias() = A * MapC<T>(pb, br, bc);
  } else {
    for (std::int64_t i = 0; i < batch; ++i) {
      MapC<T> A(pa + i * sa, ar, ac);
      MapC<T> B(pb + i * sb, br, bc);
      MapM<T> C(out.data() + i * M * N, M, N);
      if (trans_a && trans_b)
        C.noalias() = A.transpose() * B.transpose();
      else if (trans_a)
        C.noalias() = A.transpose() * B;
      else if (trans_b)
        C.noalias() = A * B.transpose();
      else
        C.noalias() = A * B;
    }
  }
  OpAttrs attrs;
  attrs.trans_a = trans_a;
  attrs.trans_b = trans_b;
  return make_result(std::move(out_shape), std::move(out), OpKind::matmul, {a, b}, attrs,
                     [a, b, trans_a, trans_b, batch, M, N, K, ar, ac, br, bc, shared_b](const TensorImpl<T>& o) {
                       const T* pa = a.data().data();
                       const T* pb = b.data().data();
                       const T* pg = o.grad.data();
                       const std::int64_t sa = ar * ac, sb = shared_b ? 0 : br * bc;
                       if (wants(a)) {
                         std::vector<T> ga(static_cast<size_t>(a.numel()));
                         for (std::int64_t i = 0; i < batch; ++i) {
                           MapC<T> G(pg + i * M * N, M, N);
                           MapC<T> B(pb + i * sb, br, bc);
                           MapM<T> GA(ga.data() + i * sa, ar, ac);
                           // op(B) is (K, N); dOpA = G * op(B)^T
                           if (!trans_a) {
                             if (trans_b)
                               GA.noalias() = G * B;
                             else
                               GA.noalias() = G * B.transpose();
                           } else {
                             if (trans_b)
                               GA.noalias() = B.transpose() * G.transpose();
                             else
                               GA.noalias() = B * G.transpose();
                           }
                         }
                         a.impl().accumulate_grad(ga);
                       }
                       if (wants(b)) {
                         std::vector<T> gb(static_cast<size_t>(b.numel()), T(0));
                         if (shared_b && !trans_a) {
                           MapC<T> A(pa, batch * M, K);
                           MapC<T> G(pg, batch * M, N);
                           MapM<T> GB(gb.data(), br, bc);
                           if (trans_b)
                             GB.noalias() = G.transpose() * A;
                           else
                             GB.noalias() = A.transpose() * G;
                         } else {
                           for (std::int64_t i = 0; i < batch; ++i) {
                             MapC<T> A(pa + i * sa, ar, ac);
                             MapC<T> G(pg + i * M * N, M, N);
                             MapM<T> GB(gb.data() + i * sb, br, bc);
                             // op(A) is (M, K); dOpB = op(A)^T * G
                             if (!trans_b) {
                               if (trans_a)
                                 GB.noalias() += A * G;
                               else
                                 GB.noalias() += A.transpose() * G;
                             } else {
                               if (trans_a)
                                 GB.noalias() += G.transpose() * A.transpose();
                               else
                                 GB.noalias() += G.transpose() * A;
                             }
                           }
                         }
                         b.impl().accumulate_grad(gb);
                       }
                     });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride, int padding) {
  if (x.ndim() != 4 || w.ndim() != 4) shape_error(OpKind::conv2d, "expects 4-D input and weight", x.shape(), w.shape());
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: invalid stride/padding");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) shape_error(OpKind::conv2d, "channel mismatch", x.shape(), w.shape());
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Co)) {
    shape_error(OpKind::conv2d, "bias mismatch", bias.shape(), w.shape());
  }
  const std::int64_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * padding - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) shape_error(OpKind::conv2d, "kernel larger than padded input", x.shape(), w.shape());
  const std::int64_t Kc = C * kh * kw, P = Ho * Wo;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;
  std::vector<T> out(static_cast<size_t>(B * Co * P));
  std::vector<T> cols(direct ? 0 : static_cast<size_t>(Kc * P));
  MapC<T> Wm(w.data().data(), Co, Kc);
  for (std::int64_t n = 0; n < B; ++n) {
    const T* xn = x.data().data() + n * C * H * W;
    const T* cp = xn;
    if (!direct) {
      im2col(xn, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
      cp = cols.data();
    }
    MapM<T> Y(out.data() + n * Co * P, Co, P);
    Y.noalias() = Wm * MapC<T>(cp, Kc, P);
    if (bias.defined()) {
      const T* pbias = bias.data().data();
      for (std::int64_t c = 0; c < Co; ++c) Y.row(c).array() += pbias[c];
    }
  }
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.padding = padding;
  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {B, Co, Ho, Wo}, std::move(out), OpKind::conv2d, std::move(inputs), attrs,
      [x, w, bias, B, C, H, W, Co, kh, kw, stride, padding, Ho, Wo, Kc, P, direct](const TensorImpl<T>& o) {
        MapC<T> Wm(w.data().data(), Co, Kc);
        std::vector<T> gx(wants(x) ? static_cast<size_t>(x.numel()) : 0, T(0));
        std::vector<T> gw(wants(w) ? static_cast<size_t>(w.numel()) : 0, T(0));
        std::vector<T> cols(direct ? 0 : static_cast<size_t>(Kc * P));
        std::vector<T> dcols(direct ? 0 : static_cast<size_t>(Kc * P));
        for (std::int64_t n = 0; n < B; ++n) {
          MapC<T> G(o.grad.data() + n * Co * P, Co, P);
          const T* xn = x.data().data() + n * C * H * W;
          if (wants(w)) {
            const T* cp = xn;
            if (!direct) {
              im2col(xn, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
              cp = cols.data();
            }
            MapM<T>(gw.data(), Co, Kc).noalias() += G * MapC<T>(cp, Kc, P).transpose();
          }
          if (wants(x)) {
            if (direct) {
              MapM<T>(gx.data() + n * C * H * W, Kc, P).noalias() += Wm.transpose() * G;
            } else {
              MapM<T>(dcols.data(), Kc, P).noalias() = Wm.transpose() * G;
              col2im(dcols.data(), C, H, W, kh, kw, stride, padding, Ho, Wo, gx.data() + n * C * H * W);
            }
          }
        }
        if (wants(x)) x.impl().accumulate_grad(gx);
        if (wants(w)) w.impl().accumulate_grad(gw);
        if (wants(bias)) {
          std::vector<T> gb(static_cast<size_t>(Co), T(0));
          for (std::int64_t n = 0; n < B; ++n) {
            for (std::int64_t c = 0; c < Co; ++c) {
              const T* g = o.grad.data() + (n * Co + c) * P;
              gb[c] += std::accumulate(g, g + P, T(0));
            }
          }
          bias.impl().accumulate_grad(gb);
        }
      });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (x.ndim() != 4) shape_error(OpKind::upsample_nearest, "expects 4-D input", x.shape());
  if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = H * factor, Wo = W * factor;
  std::vector<T> out(static_cast<size_t>(BC * Ho * Wo));
  const T* px = x.data().data();
  for (std::int64_t p = 0; p < BC; ++p) {
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      const T* src = px + (p * H + oy / factor) * W;
      T* dst = out.data() + (p * Ho + oy) * Wo;
      for (std::int64_t ox = 0; ox < Wo; ++ox) dst[ox] = src[ox / factor];
    }
  }
  OpAttrs attrs;
  attrs.factor = factor;
  return make_result({x.dim(0), x.dim(1), Ho, Wo}, std::move(out), OpKind::upsample_nearest, {x}, attrs,
                     [x, BC, H, W, Ho, Wo, factor](const TensorImpl<T>& o) {
                       std::vector<T> g(static_cast<size_t>(x.numel()), T(0));
                       for (std::int64_t p = 0; p < BC; ++p) {
                         for (std::int64_t oy = 0; oy < Ho; ++oy) {
                           T* dst = g.data() + (p * H + oy / factor) * W;
                           const T* src = o.grad.data() + (p * Ho + oy) * Wo;
                           for (std::int64_t ox = 0; ox < Wo; ++ox) dst[ox / factor] += src[ox];
                         }
                       }
                       x.impl().accumulate_grad(g);
                     });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int groups, double eps) {
  if (x.ndim() < 2) shape_error(OpKind::group_norm, "expects (B, C, ...) input", x.shape());
  const std::int64_t B = x.dim(0), C = x.dim(1);
  if (groups < 1 || C % groups != 0) {
    throw std::invalid_argument("group_norm: " + std::to_string(C) + " channels not divisible into " +
                                std::to_string(groups) + " groups");
  }
  if (gamma.numel() != C || beta.numel() != C) shape_error(OpKind::group_norm, "affine size mismatch", gamma.shape(), x.shape());
  const std::int64_t S = x.numel() / (B * C);
  const std::int64_t cpg = C / groups;
  const std::int64_t gsize = cpg * S;
  std::vector<T> mean_v(static_cast<size_t>(B * groups)), rstd_v(static_cast<size_t>(B * groups));
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  for (std::int64_t n = 0; n < B; ++n) {
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* src = px + (n * C + g * cpg) * S;
      double m = 0;
      for (std::int64_t i = 0; i < gsize; ++i) m += src[i];
      m /= static_cast<double>(gsize);
      double v = 0;
      for (std::int64_t i = 0; i < gsize; ++i) v += (src[i] - m) * (src[i] - m);
      v /= static_cast<double>(gsize);
      const T rstd = static_cast<T>(1.0 / std::sqrt(v + eps));
      mean_v[n * groups + g] = static_cast<T>(m);
      rstd_v[n * groups + g] = rstd;
      T* dst = out.data() + (n * C + g * cpg) * S;
      for (std::int64_t c = 0; c < cpg; ++c) {
        const T ga = pg[g * cpg + c], be = pb[g * cpg + c];
        for (std::int64_t s = 0; s < S; ++s) {
          const std::int64_t i = c * S + s;
          dst[i] = (src[i] - static_cast<T>(m)) * rstd * ga + be;
        }
      }
    }
  }
  OpAttrs attrs;
  attrs.groups = groups;
  attrs.eps = eps;
  return make_result(
      x.shape(), std::move(out), OpKind::group_norm, {x, gamma, beta}, attrs,
      [x, gamma, beta, B, C, S, cpg, groups, gsize, mean_v = std::move(mean_v),
       rstd_v = std::move(rstd_v)](const TensorImpl<T>& o) {
        const T* px = x.data().data();
        const T* pg = gamma.data().data();
        std::vector<T> gx(wants(x) ? static_cast<size_t>(x.numel()) : 0);
        std::vector<T> ggam(static_cast<size_t>(C), T(0)), gbet(static_cast<size_t>(C), T(0));
        std::vector<T> dxhat(static_cast<size_t>(gsize));
        for (std::int64_t n = 0; n < B; ++n) {
          for (std::int64_t g = 0; g < groups; ++g) {
            const std::int64_t base = (n * C + g * cpg) * S;
            const T m = mean_v[n * groups + g], rstd = rstd_v[n * groups + g];
            T sum_d = 0, sum_dx = 0;
            for (std::int64_t c = 0; c < cpg; ++c) {
              const std::int64_t ch = g * cpg + c;
              for (std::int64_t s = 0; s < S; ++s) {
                const std::int64_t i = c * S + s;
                const T xhat = (px[base + i] - m) * rstd;
                const T dy = o.grad[base + i];
                ggam[ch] += dy * xhat;
                gbet[ch] += dy;
                const T d = dy * pg[ch];
                dxhat[i] = d;
                sum_d += d;
                sum_dx += d * xhat;
              }
            }
            if (wants(x)) {
              const T inv = T(1) / static_cast<T>(gsize);
              for (std::int64_t i = 0; i < gsize; ++i) {
                const T xhat = (px[base + i] - m) * rstd;
                gx[base + i] = rstd * (dxhat[i] - sum_d * inv - xhat * sum_dx * inv);
              }
            }
          }
        }
        if (wants(x)) x.impl().accumulate_grad(gx);
        if (wants(gamma)) gamma.impl().accumulate_grad(ggam);
        if (wants(beta)) beta.impl().accumulate_grad(gbet);
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = normalize_axis(OpKind::softmax, axis, x.ndim(), x.shape());
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.n * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t k = 0; k < sp.n; ++k) mx = std::max(mx, px[base + k * sp.inner]);
      T s = 0;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T e = std::exp(px[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::int64_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] *= inv;
    }
  }
  OpAttrs attrs;
  attrs.axes = {axis};
  return make_result(x.shape(), std::move(out), OpKind::softmax, {x}, attrs, [x, sp](const TensorImpl<T>& o) {
    std::vector<T> g(static_cast<size_t>(x.numel()));
    const T* y = o.data.data();
    const T* gy = o.grad.data();
    for (std::int64_t ou = 0; ou < sp.outer; ++ou) {
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const std::int64_t base = ou * sp.n * sp.inner + in;
        T dot = 0;
        for (std::int64_t k = 0; k < sp.n; ++k) dot += gy[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::int64_t k = 0; k < sp.n; ++k) {
          const auto i = base + k * sp.inner;
          g[i] = y[i] * (gy[i] - dot);
        }
      }
    }
    x.impl().accumulate_grad(g);
  });
}

// ---- shape manipulation -------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  std::int64_t infer = -1, known = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) shape_error(OpKind::reshape, "more than one inferred axis in", shape);
      infer = static_cast<std::int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = x.numel() / known;
  if (shape_numel(shape) != x.numel()) shape_error(OpKind::reshape, "element count differs", x.shape(), shape);
  OpAttrs attrs;
  attrs.axes = shape;
  return make_result(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), OpKind::reshape, {x}, attrs,
                     [x](const TensorImpl<T>& o) { x.impl().accumulate_grad(o.grad); });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::int64_t> order) {
  const auto nd = x.ndim();
  if (static_cast<std::int64_t>(order.size()) != nd) shape_error(OpKind::permute, "order rank mismatch for", x.shape());
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (auto& a : order) {
    if (a < 0) a += nd;
    if (a < 0 || a >= nd || seen[a]) shape_error(OpKind::permute, "invalid axis order for", x.shape());
    seen[a] = true;
  }
  Shape out_shape(static_cast<size_t>(nd));
  for (size_t i = 0; i < order.size(); ++i) out_shape[i] = x.shape()[order[i]];
  std::vector<std::int64_t> inverse(order.size());
  for (size_t i = 0; i < order.size(); ++i) inverse[order[i]] = static_cast<std::int64_t>(i);
  OpAttrs attrs;
  attrs.axes = order;
  auto out = permute_data(x.data(), x.shape(), order);
  return make_result(std::move(out_shape), std::move(out), OpKind::permute, {x}, attrs,
                     [x, inverse](const TensorImpl<T>& o) {
                       x.impl().accumulate_grad(permute_data<T>(o.grad, o.shape, inverse));
                     });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  axis = normalize_axis(OpKind::concat, axis, xs[0].ndim(), s0);
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    bool ok = s.size() == s0.size();
    for (size_t i = 0; ok && i < s.size(); ++i) ok = (static_cast<int>(i) == axis) || s[i] == s0[i];
    if (!ok) shape_error(OpKind::concat, "incompatible shapes", s0, s);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> chunk(xs.size());
  for (size_t k = 0; k < xs.size(); ++k) chunk[k] = xs[k].shape()[axis] * sp.inner;
  const std::int64_t row = sp.n * sp.inner;
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    std::int64_t off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
      const T* src = xs[k].data().data() + o * chunk[k];
      std::copy(src, src + chunk[k], out.data() + o * row + off);
      off += chunk[k];
    }
  }
  OpAttrs attrs;
  attrs.axes = {axis};
  return make_result(std::move(out_shape), std::move(out), OpKind::concat, xs, attrs,
                     [xs, chunk, row, outer = sp.outer](const TensorImpl<T>& o) {
                       std::int64_t off = 0;
                       for (size_t k = 0; k < xs.size(); ++k) {
                         if (wants(xs[k])) {
                           std::vector<T> g(static_cast<size_t>(xs[k].numel()));
                           for (std::int64_t r = 0; r < outer; ++r) {
                             const T* src = o.grad.data() + r * row + off;
                             std::copy(src, src + chunk[k], g.data() + r * chunk[k]);
                           }
                           xs[k].impl().accumulate_grad(g);
                         }
                         off += chunk[k];
                       }
                     });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, int axis, std::int64_t index) {
  axis = normalize_axis(OpKind::select, axis, x.ndim(), x.shape());
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (index < 0 || index >= sp.n) {
    shape_error(OpKind::select, "index " + std::to_string(index) + " out of range for", x.shape());
  }
  Shape out_shape;
  for (std::int64_t i = 0; i < x.ndim(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(static_cast<size_t>(sp.outer * sp.inner));
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    const T* src = x.data().data() + (o * sp.n + index) * sp.inner;
    std::copy(src, src + sp.inner, out.data() + o * sp.inner);
  }
  OpAttrs attrs;
  attrs.axes = {axis};
  attrs.index = index;
  return make_result(std::move(out_shape), std::move(out), OpKind::select, {x}, attrs,
                     [x, sp, index](const TensorImpl<T>& o) {
                       std::vector<T> g(static_cast<size_t>(x.numel()), T(0));
                       for (std::int64_t ou = 0; ou < sp.outer; ++ou) {
                         const T* src = o.grad.data() + ou * sp.inner;
                         std::copy(src, src + sp.inner, g.data() + (ou * sp.n + index) * sp.inner);
                       }
                       x.impl().accumulate_grad(g);
                     });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::int64_t>& ids) {
  if (table.ndim() != 2) shape_error(OpKind::embedding, "table must be 2-D", table.shape());
  if (ids.empty()) throw std::invalid_argument("embedding: empty id list");
  const std::int64_t V = table.dim(0), D = table.dim(1);
  std::vector<T> out(ids.size() * static_cast<size_t>(D));
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= V) {
      throw std::invalid_argument("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                  std::to_string(V));
    }
    const T* src = table.data().data() + ids[i] * D;
    std::copy(src, src + D, out.data() + i * D);
  }
  OpAttrs attrs;
  attrs.ids = ids;
  return make_result({static_cast<std::int64_t>(ids.size()), D}, std::move(out), OpKind::embedding, {table}, attrs,
                     [table, ids, D](const TensorImpl<T>& o) {
                       std::vector<T> g(static_cast<size_t>(table.numel()), T(0));
                       for (size_t i = 0; i < ids.size(); ++i) {
                         for (std::int64_t d = 0; d < D; ++d) g[ids[i] * D + d] += o.grad[i * D + d];
                       }
                       table.impl().accumulate_grad(g);
                     });
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.ndim() < 2) shape_error(OpKind::add_channel_bias, "expects (B, C, ...) input", x.shape());
  const std::int64_t B = x.dim(0), C = x.dim(1);
  const bool per_sample = bias.ndim() == 2;
  if (!((bias.ndim() == 1 && bias.dim(0) == C) || (per_sample && bias.dim(0) == B && bias.dim(1) == C))) {
    shape_error(OpKind::add_channel_bias, "bias mismatch", x.shape(), bias.shape());
  }
  const std::int64_t S = x.numel() / (B * C);
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::int64_t n = 0; n < B; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T b = bias.data()[per_sample ? n * C + c : c];
      T* dst = out.data() + (n * C + c) * S;
      for (std::int64_t s = 0; s < S; ++s) dst[s] += b;
    }
  }
  return make_result(x.shape(), std::move(out), OpKind::add_channel_bias, {x, bias}, {},
                     [x, bias, B, C, S, per_sample](const TensorImpl<T>& o) {
                       if (wants(x)) x.impl().accumulate_grad(o.grad);
                       if (wants(bias)) {
                         std::vector<T> g(static_cast<size_t>(bias.numel()), T(0));
                         for (std::int64_t n = 0; n < B; ++n) {
                           for (std::int64_t c = 0; c < C; ++c) {
                             const T* src = o.grad.data() + (n * C + c) * S;
                             g[per_sample ? n * C + c : c] += std::accumulate(src, src + S, T(0));
                           }
                         }
                         bias.impl().accumulate_grad(g);
                       }
                     });
}

// ---- reductions ---------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result(Shape{1}, std::vector<T>{s}, OpKind::sum, {x}, {}, [x](const TensorImpl<T>& o) {
    x.impl().accumulate_grad(std::vector<T>(static_cast<size_t>(x.numel()), o.grad[0]));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  return make_result(Shape{1}, std::vector<T>{s * inv}, OpKind::mean, {x}, {}, [x, inv](const TensorImpl<T>& o) {
    x.impl().accumulate_grad(std::vector<T>(static_cast<size_t>(x.numel()), o.grad[0] * inv));
  });
}

namespace {
template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& x, int axis, bool average) {
  const OpKind kind = average ? OpKind::mean_axis : OpKind::sum_axis;
  axis = normalize_axis(kind, axis, x.ndim(), x.shape());
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::int64_t i = 0; i < x.ndim(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape = {1};
  const T scale = average ? T(1) / static_cast<T>(sp.n) : T(1);
  std::vector<T> out(static_cast<size_t>(sp.outer * sp.inner), T(0));
  const T* px = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t k = 0; k < sp.n; ++k) {
      const T* src = px + (o * sp.n + k) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out) v *= scale;
  OpAttrs attrs;
  attrs.axes = {axis};
  return make_result(std::move(out_shape), std::move(out), kind, {x}, attrs, [x, sp, scale](const TensorImpl<T>& o) {
    std::vector<T> g(static_cast<size_t>(x.numel()));
    for (std::int64_t ou = 0; ou < sp.outer; ++ou) {
      for (std::int64_t k = 0; k < sp.n; ++k) {
        T* dst = g.data() + (ou * sp.n + k) * sp.inner;
        const T* src = o.grad.data() + ou * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] = src[i] * scale;
      }
    }
    x.impl().accumulate_grad(g);
  });
}
}  // namespace

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  return reduce_axis(x, axis, false);
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  return reduce_axis(x, axis, true);
}

template <typename T>
Tensor<T> max_all(const Tensor<T>& x) {
  const auto d = x.data();
  const auto it = std::max_element(d.begin(), d.end());
  const auto arg = std::distance(d.begin(), it);
  return make_result(Shape{1}, std::vector<T>{*it}, OpKind::max_all, {x}, {}, [x, arg](const TensorImpl<T>& o) {
    std::vector<T> g(static_cast<size_t>(x.numel()), T(0));
    g[arg] = o.grad[0];
    x.impl().accumulate_grad(g);
  });
}

template <typename T>
Tensor<T> bce(const Tensor<T>& p, const Tensor<T>& target, double eps) {
  if (p.shape() != target.shape()) shape_error(OpKind::bce, "probability/target shapes differ", p.shape(), target.shape());
  const T lo = static_cast<T>(eps), hi = static_cast<T>(1.0 - eps);
  const auto pp = p.data();
  const auto pt = target.data();
  double acc = 0;
  for (size_t i = 0; i < pp.size(); ++i) {
    const double q = std::clamp(pp[i], lo, hi);
    acc -= pt[i] * std::log(q) + (1.0 - pt[i]) * std::log(1.0 - q);
  }
  const auto n = static_cast<double>(pp.size());
  OpAttrs attrs;
  attrs.eps = eps;
  return make_result(Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, OpKind::bce, {p, target}, attrs,
                     [p, target, lo, hi, n](const TensorImpl<T>& o) {
                       if (!wants(p)) return;
                       const auto pp = p.data();
                       const auto pt = target.data();
                       std::vector<T> g(pp.size(), T(0));
                       const T scale = o.grad[0] / static_cast<T>(n);
                       for (size_t i = 0; i < pp.size(); ++i) {
                         const T q = pp[i];
                         if (q < lo || q > hi) continue;
                         g[i] = scale * (-pt[i] / q + (T(1) - pt[i]) / (T(1) - q));
                       }
                       p.impl().accumulate_grad(g);
                     });
}

namespace {
struct Tap {
  std::int64_t i0, i1;
  double w1;
};

std::vector<Tap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    const double src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    i0 = std::clamp<std::int64_t>(i0, 0, in - 1);
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}
}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  if (x.ndim() != 4) shape_error(OpKind::resize_bilinear, "expects 4-D input", x.shape());
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: output size must be positive");
  const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  std::vector<T> out(static_cast<size_t>(BC * out_h * out_w));
  const T* px = x.data().data();
  for (std::int64_t p = 0; p < BC; ++p) {
    const T* src = px + p * H * W;
    T* dst = out.data() + p * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
        dst[oy * out_w + ox] = wy0 * (wx0 * src[a.i0 * W + b.i0] + wx1 * src[a.i0 * W + b.i1]) +
                               wy1 * (wx0 * src[a.i1 * W + b.i0] + wx1 * src[a.i1 * W + b.i1]);
      }
    }
  }
  OpAttrs attrs;
  attrs.out_h = out_h;
  attrs.out_w = out_w;
  return make_result({x.dim(0), x.dim(1), out_h, out_w}, std::move(out), OpKind::resize_bilinear, {x}, attrs,
                     [x, BC, H, W, out_h, out_w, ty, tx](const TensorImpl<T>& o) {
                       std::vector<T> g(static_cast<size_t>(x.numel()), T(0));
                       for (std::int64_t p = 0; p < BC; ++p) {
                         T* dst = g.data() + p * H * W;
                         const T* src = o.grad.data() + p * out_h * out_w;
                         for (int oy = 0; oy < out_h; ++oy) {
                           const auto& a = ty[oy];
                           const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
                           for (int ox = 0; ox < out_w; ++ox) {
                             const auto& b = tx[ox];
                             const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
                             const T gv = src[oy * out_w + ox];
                             dst[a.i0 * W + b.i0] += gv * wy0 * wx0;
                             dst[a.i0 * W + b.i1] += gv * wy0 * wx1;
                             dst[a.i1 * W + b.i0] += gv * wy1 * wx0;
                             dst[a.i1 * W + b.i1] += gv * wy1 * wx1;
                           }
                         }
                       }
                       x.impl().accumulate_grad(g);
                     });
}

// ---- dispatch -----------------------------------------------------------

template <typename T>
Tensor<T> apply(OpKind kind, const std::vector<Tensor<T>>& in, const OpAttrs& at) {
  auto need = [&](size_t n) {
    if (in.size() < n) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(in.size()));
    }
  };
  auto axis0 = [&]() -> int {
    if (at.axes.empty()) throw std::invalid_argument(std::string(op_name(kind)) + ": missing axis attribute");
    return static_cast<int>(at.axes[0]);
  };
  switch (kind) {
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::sub: need(2); return sub(in[0], in[1]);
    case OpKind::mul: need(2); return mul(in[0], in[1]);
    case OpKind::div: need(2); return div(in[0], in[1]);
    case OpKind::add_scalar: need(1); return add_scalar(in[0], at.scalar);
    case OpKind::mul_scalar: need(1); return mul_scalar(in[0], at.scalar);
    case OpKind::matmul: need(2); return matmul(in[0], in[1], at.trans_a, at.trans_b);
    case OpKind::conv2d:
      need(2);
      return conv2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor<T>(), static_cast<int>(at.stride),
                    static_cast<int>(at.padding));
    case OpKind::upsample_nearest: need(1); return upsample_nearest(in[0], static_cast<int>(at.factor));
    case OpKind::group_norm: need(3); return group_norm(in[0], in[1], in[2], static_cast<int>(at.groups), at.eps);
    case OpKind::silu: need(1); return silu(in[0]);
    case OpKind::softmax: need(1); return softmax(in[0], axis0());
    case OpKind::reshape: need(1); return reshape(in[0], at.axes);
    case OpKind::permute: need(1); return permute(in[0], at.axes);
    case OpKind::concat: need(1); return concat(in, axis0());
    case OpKind::embedding: need(1); return embedding(in[0], at.ids);
    case OpKind::sum: need(1); return sum(in[0]);
    case OpKind::mean: need(1); return mean(in[0]);
    case OpKind::sum_axis: need(1); return sum_axis(in[0], axis0());
    case OpKind::mean_axis: need(1); return mean_axis(in[0], axis0());
    case OpKind::max_all: need(1); return max_all(in[0]);
    case OpKind::bce: need(2); return bce(in[0], in[1], at.eps);
    case OpKind::clamp: need(1); return clamp(in[0], at.lo, at.hi);
    case OpKind::resize_bilinear:
      need(1);
      return resize_bilinear(in[0], static_cast<int>(at.out_h), static_cast<int>(at.out_w));
    case OpKind::select: need(1); return select(in[0], axis0(), at.index);
    case OpKind::add_channel_bias: need(2); return add_channel_bias(in[0], in[1]);
  }
  throw std::invalid_argument("apply: unknown operation");
}

#define ZESTDIFF_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> add_scalar(const Tensor<T>&, double);                                                 \
  template Tensor<T> mul_scalar(const Tensor<T>&, double);                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);               \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                              \
  template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, double);        \
  template Tensor<T> silu(const Tensor<T>&);                                                               \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> permute(const Tensor<T>&, std::vector<std::int64_t>);                                 \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                           \
  template Tensor<T> embedding(const Tensor<T>&, const std::vector<std::int64_t>&);                        \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> sum_axis(const Tensor<T>&, int);                                                      \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                                                     \
  template Tensor<T> max_all(const Tensor<T>&);                                                            \
  template Tensor<T> bce(const Tensor<T>&, const Tensor<T>&, double);                                      \
  template Tensor<T> clamp(const Tensor<T>&, double, double);                                              \
  template Tensor<T> resize_bilinear(const Tensor<T>&, int, int);                                          \
  template Tensor<T> select(const Tensor<T>&, int, std::int64_t);                                          \
  template Tensor<T> add_channel_bias(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> apply(OpKind, const std::vector<Tensor<T>>&, const OpAttrs&);

ZESTDIFF_INSTANTIATE_OPS(float)
ZESTDIFF_INSTANTIATE_OPS(double)

#undef ZESTDIFF_INSTANTIATE_OPS

}  // namespace zestdiff

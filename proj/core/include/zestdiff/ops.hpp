#pragma once

#include <vector>

#include "zestdiff/tensor.hpp"

// Differentiable primitives. Broadcasting is limited to two cases: a
// scalar (one-element) right operand, and a right operand whose shape is a
// suffix of the left operand's shape (leading-batch broadcast). Anything
// else must be aligned explicitly.
namespace zestdiff {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, double s);

/// Batched matrix product over the last two axes. `b` is either 2-D
/// (shared across the batch) or has the same leading axes as `a`.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

/// x: (B, Cin, H, W), w: (Cout, Cin, kh, kw), bias: (Cout) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride, int padding);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);

/// x: (B, C, ...) normalised over (C/groups, ...) per group; gamma/beta: (C).
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, int groups,
                     double eps = 1e-5);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::int64_t> order);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);

/// Rows of `table` (V, D) gathered by `ids`; result (ids.size(), D).
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::int64_t>& ids);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis);
/// Largest entry as a one-element tensor; the gradient flows to the first maximiser.
template <typename T>
Tensor<T> max_all(const Tensor<T>& x);

/// Mean binary cross-entropy between probabilities `p` and constant targets.
/// Probabilities are clamped to [eps, 1-eps] before the logarithm.
template <typename T>
Tensor<T> bce(const Tensor<T>& p, const Tensor<T>& target, double eps = 1e-6);

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, double lo, double hi);

/// x: (B, C, H, W) resized to (B, C, out_h, out_w), corner-aligned bilinear.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w);

/// Slice `index` along `axis`, dropping that axis.
template <typename T>
Tensor<T> select(const Tensor<T>& x, int axis, std::int64_t index);

/// x: (B, C, ...) plus bias (B, C) or (C) broadcast over trailing axes.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// Generic entry point dispatching on the operation kind.
template <typename T>
Tensor<T> apply(OpKind kind, const std::vector<Tensor<T>>& inputs, const OpAttrs& attrs);

}  // namespace zestdiff

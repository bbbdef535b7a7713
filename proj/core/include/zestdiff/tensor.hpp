#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace zestdiff {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

const char* dtype_name(DType d);

enum class OpKind {
  add,
  sub,
  mul,
  div,
  add_scalar,
  mul_scalar,
  matmul,
  conv2d,
  upsample_nearest,
  group_norm,
  silu,
  softmax,
  reshape,
  permute,
  concat,
  embedding,
  sum,
  mean,
  sum_axis,
  mean_axis,
  max_all,
  bce,
  clamp,
  resize_bilinear,
  select,
  add_channel_bias,
};

const char* op_name(OpKind kind);

/// Attributes for the primitive operations. Only the fields an operation
/// reads are meaningful; everything else keeps its default.
struct OpAttrs {
  std::vector<std::int64_t> axes;  // permute order, reshape target, axis for softmax/concat/select/reductions
  std::vector<std::int64_t> ids;   // embedding lookup ids
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t groups = 1;
  std::int64_t factor = 2;
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  std::int64_t index = 0;
  bool trans_a = false;
  bool trans_b = false;
  double scalar = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double eps = 1e-5;
};

template <typename T>
class Tensor;

template <typename T>
struct TensorImpl;

template <typename T>
struct OpNode {
  OpKind kind;
  std::vector<Tensor<T>> inputs;
  OpAttrs attrs;
  // Reads out.grad and accumulates into the inputs' gradients.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<OpNode<T>> node;

  void accumulate_grad(std::span<const T> g);
};

/// Dense row-major tensor with shared storage. Values are immutable after
/// construction apart from gradient accumulation; copies alias the same
/// storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  std::int64_t ndim() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t dim(std::int64_t i) const;

  std::span<const T> data() const { return impl_->data; }
  // Only for filling freshly created leaves (parameter init, optimizer steps).
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  Tensor grad_tensor() const;
  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->node == nullptr; }
  const OpNode<T>* node() const { return impl_->node.get(); }

  // New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;

  TensorImpl<T>& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Reverse-mode pass from a scalar loss. Leaves with requires_grad end up
/// holding d(loss)/d(leaf); intermediate gradients are released.
template <typename T>
void backward(const Tensor<T>& loss);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace zestdiff

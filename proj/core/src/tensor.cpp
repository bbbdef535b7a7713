#include "zestdiff/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace zestdiff {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::mul_scalar: return "mul_scalar";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::upsample_nearest: return "upsample_nearest";
    case OpKind::group_norm: return "group_norm";
    case OpKind::silu: return "silu";
    case OpKind::softmax: return "softmax";
    case OpKind::reshape: return "reshape";
    case OpKind::permute: return "permute";
    case OpKind::concat: return "concat";
    case OpKind::embedding: return "embedding";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::mean_axis: return "mean_axis";
    case OpKind::max_all: return "max_all";
    case OpKind::bce: return "bce";
    case OpKind::clamp: return "clamp";
    case OpKind::resize_bilinear: return "resize_bilinear";
    case OpKind::select: return "select";
    case OpKind::add_channel_bias: return "add_channel_bias";
  }
  return "unknown";
}

template <typename T>
void TensorImpl<T>::accumulate_grad(std::span<const T> g) {
  if (!requires_grad) return;
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(std::int64_t i) const {
  const auto n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n) throw std::out_of_range("tensor: axis out of range for shape " + shape_str(shape()));
  return impl_->shape[static_cast<size_t>(i)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("tensor: item() on shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  if (static_cast<std::int64_t>(index.size()) != ndim()) {
    throw std::invalid_argument("tensor: index rank mismatch for shape " + shape_str(shape()));
  }
  std::int64_t off = 0;
  size_t k = 0;
  for (auto i : index) {
    const auto extent = impl_->shape[k++];
    if (i < 0 || i >= extent) throw std::out_of_range("tensor: index out of range");
    off = off * extent + i;
  }
  return impl_->data[static_cast<size_t>(off)];
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor::from_data(shape(), impl_->grad);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), impl_->data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss does not require grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<const TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
  stack.emplace_back(&loss.impl(), 0);
  visited.insert(&loss.impl());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node && next < node->inputs.size()) {
      auto* child = &node->inputs[next++].impl();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (auto* impl : order) {
    if (!impl->node) {
      if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
    } else {
      impl->grad.clear();
    }
  }
  loss.impl().grad.assign(1, T(1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (!impl->node) continue;
    if (!impl->grad.empty()) impl->node->backward(*impl);
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace zestdiff

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mouthnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
class Tensor;

template <typename T>
struct TensorImpl;

// One recorded operation. `backward` reads the output (its data and grad)
// and accumulates into the parents' gradient buffers.
template <typename T>
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  // Zero-initialised on first use.
  T* grad_buffer();
  // grad_buffer() if this tensor takes gradients, otherwise nullptr.
  T* grad_target() { return requires_grad ? grad_buffer() : nullptr; }
};

// Shared handle to a buffer that may participate in a reverse-mode graph.
// Copies alias the same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->node == nullptr; }
  const Node<T>* node() const { return impl_->node.get(); }

  Tensor detach() const;
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<TensorImpl<T>> impl);

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Builds the result tensor of an operation and, if any parent requires a
// gradient and recording is enabled, attaches a node with `backward`.
template <typename T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(const TensorImpl<T>&)> backward);

// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
// intermediate gradients are reset at the start of each sweep.
template <typename T>
void backward(const Tensor<T>& loss);

// While alive on the current thread, operations do not record graph nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mouthnet

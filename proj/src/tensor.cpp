#include "mouthnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace mouthnet {

namespace {
thread_local bool g_recording = true;
}

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }
bool grad_recording_enabled() { return g_recording; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
T* TensorImpl<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad.data();
}

template <typename T>
Tensor<T>::Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->data.assign(1, T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  if (mouthnet::numel(shape) != data.size())
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                     " elements");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const auto n = mouthnet::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = mouthnet::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(impl_->shape, impl_->data);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(std::shared_ptr<TensorImpl<T>> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

template <typename T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(const TensorImpl<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_recording_enabled()) return out;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor<T>& p) { return p.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->parents.reserve(parents.size());
  for (auto& p : parents) node->parents.push_back(p.impl());
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1 || loss.rank() != 0)
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));

  // Iterative post-order DFS; `order` ends with the loss.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node && next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (auto* impl : order)
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  loss.impl()->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* impl = *it;
    if (impl->node && impl->node->backward) impl->node->backward(*impl);
  }
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(std::string, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(const TensorImpl<float>&)>);
template Tensor<double> make_result(std::string, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(const TensorImpl<double>&)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace mouthnet

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "mouthnet/tensor.hpp"

namespace mouthnet {

enum class BinaryKind { add, sub, mul };
enum class ActivationKind { sigmoid, tanh, relu };
enum class ReduceKind { sum, mean, max };

// Elementwise with trailing-dimension broadcasting: either shapes match or the
// smaller operand's shape is a suffix of the larger one's.
template <typename T>
Tensor<T> ew_binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return ew_binary(a, b, BinaryKind::add); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return ew_binary(a, b, BinaryKind::sub); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return ew_binary(a, b, BinaryKind::mul); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// (m,k) x (k,n) -> (m,n)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> activation(const Tensor<T>& x, ActivationKind kind);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, ActivationKind::sigmoid); }
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) { return activation(x, ActivationKind::tanh); }
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, ActivationKind::relu); }

// Reduced axes are dropped; reducing every axis yields a rank-0 tensor.
// Max routes its gradient to the first maximal element.
template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceKind kind, std::vector<std::size_t> axes);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Inserts a new axis at `axis` and concatenates along it.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Max over elements of |analytic - central difference| / max(1, |analytic|, |numeric|),
// where the analytic gradient comes from backward() on f(x).
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double eps = 1e-5);

}  // namespace mouthnet

#include "mouthnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mouthnet/kernels.hpp"

namespace mouthnet {

namespace {

bool is_suffix(const Shape& small, const Shape& large) {
  if (small.size() > large.size()) return false;
  return std::equal(small.begin(), small.end(), large.end() - static_cast<std::ptrdiff_t>(small.size()));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> ew_binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const bool a_large = a.numel() > b.numel() || (a.numel() == b.numel() && a.rank() >= b.rank());
  const Shape& large = a_large ? a.shape() : b.shape();
  const Shape& small = a_large ? b.shape() : a.shape();
  if (!is_suffix(small, large))
    throw ShapeError("ew_binary: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));

  const std::size_t n = numel(large);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(n);
  switch (kind) {
    case BinaryKind::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] + bd[i % nb];
      break;
    case BinaryKind::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] - bd[i % nb];
      break;
    case BinaryKind::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] * bd[i % nb];
      break;
  }

  auto* pa = a.impl().get();
  auto* pb = b.impl().get();
  return make_result<T>("ew_binary", large, std::move(out), {a, b},
                        [pa, pb, kind, n, na, nb](const TensorImpl<T>& self) {
                          const T* g = self.grad.data();
                          if (T* ga = pa->grad_target()) {
                            if (kind == BinaryKind::mul)
                              for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * pb->data[i % nb];
                            else
                              for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i];
                          }
                          if (T* gb = pb->grad_target()) {
                            if (kind == BinaryKind::mul)
                              for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * pa->data[i % na];
                            else if (kind == BinaryKind::sub)
                              for (std::size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
                            else
                              for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto* px = x.impl().get();
  return make_result<T>("scale", x.shape(), std::move(out), {x}, [px, factor](const TensorImpl<T>& self) {
    if (T* gx = px->grad_target())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  auto* pa = a.impl().get();
  auto* pb = b.impl().get();
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [pa, pb, m, n, k](const TensorImpl<T>& self) {
    if (T* ga = pa->grad_target()) kernels::gemm_nt(m, k, n, self.grad.data(), pb->data.data(), ga);
    if (T* gb = pb->grad_target()) kernels::gemm_tn(k, n, m, pa->data.data(), self.grad.data(), gb);
  });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, ActivationKind kind) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (kind) {
      case ActivationKind::sigmoid:
        out[i] = T(1) / (T(1) + std::exp(-xd[i]));
        break;
      case ActivationKind::tanh:
        out[i] = std::tanh(xd[i]);
        break;
      case ActivationKind::relu:
        out[i] = xd[i] > T(0) ? xd[i] : T(0);
        break;
    }
  }
  auto* px = x.impl().get();
  return make_result<T>("activation", x.shape(), std::move(out), {x}, [px, kind](const TensorImpl<T>& self) {
    T* gx = px->grad_target();
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    switch (kind) {
      case ActivationKind::sigmoid:
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      case ActivationKind::tanh:
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
        break;
      case ActivationKind::relu:
        for (std::size_t i = 0; i < y.size(); ++i)
          if (px->data[i] > T(0)) gx[i] += g[i];
        break;
    }
  });
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceKind kind, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (auto a : axes)
    if (a >= x.rank())
      throw ShapeError("reduce: axis " + std::to_string(a) + " invalid for shape " + shape_str(x.shape()));

  const Shape& in_shape = x.shape();
  std::vector<bool> reduced(in_shape.size(), false);
  for (auto a : axes) reduced[a] = true;
  Shape out_shape;
  for (std::size_t d = 0; d < in_shape.size(); ++d)
    if (!reduced[d]) out_shape.push_back(in_shape[d]);

  // Flat output index of every input element.
  const auto out_strides = strides_of(out_shape);
  const std::size_t n = x.numel();
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> idx(in_shape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t o = 0, od = 0;
      for (std::size_t d = 0; d < in_shape.size(); ++d)
        if (!reduced[d]) o += idx[d] * out_strides[od++];
      target[i] = o;
      for (std::size_t d = in_shape.size(); d-- > 0;) {
        if (++idx[d] < in_shape[d]) break;
        idx[d] = 0;
      }
    }
  }

  const std::size_t m = numel(out_shape);
  const std::size_t count = m ? n / m : 0;
  const auto xd = x.data();
  std::vector<T> out(m, T(0));
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::max) {
    argmax.assign(m, static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < n; ++i) {
      auto& am = argmax[target[i]];
      if (am == static_cast<std::size_t>(-1) || xd[i] > xd[am]) am = i;
    }
    for (std::size_t o = 0; o < m; ++o) out[o] = xd[argmax[o]];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[target[i]] += xd[i];
    if (kind == ReduceKind::mean)
      for (auto& v : out) v /= static_cast<T>(count);
  }

  auto* px = x.impl().get();
  return make_result<T>(
      "reduce", std::move(out_shape), std::move(out), {x},
      [px, kind, target = std::move(target), argmax = std::move(argmax), count](const TensorImpl<T>& self) {
        T* gx = px->grad_target();
        if (!gx) return;
        const auto& g = self.grad;
        if (kind == ReduceKind::max) {
          for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
        } else {
          const T f = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
          for (std::size_t i = 0; i < target.size(); ++i) gx[i] += g[target[i]] * f;
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(x, ReduceKind::sum, axes);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(x, ReduceKind::mean, axes);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  auto* px = x.impl().get();
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [px](const TensorImpl<T>& self) {
    if (T* gx = px->grad_target())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.size()) throw ShapeError("permute: order rank mismatch for " + shape_str(in));
  std::vector<bool> seen(in.size(), false);
  for (auto a : order) {
    if (a >= in.size() || seen[a]) throw ShapeError("permute: invalid axis order for " + shape_str(in));
    seen[a] = true;
  }
  Shape out_shape(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) out_shape[d] = in[order[d]];
  const auto in_strides = strides_of(in);
  const std::size_t n = x.numel();
  // source[i] = input flat index feeding output element i
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(in.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t s = 0;
    for (std::size_t d = 0; d < in.size(); ++d) s += idx[d] * in_strides[order[d]];
    source[i] = s;
    for (std::size_t d = in.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  const auto xd = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[source[i]];
  auto* px = x.impl().get();
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                        [px, source = std::move(source)](const TensorImpl<T>& self) {
                          if (T* gx = px->grad_target())
                            for (std::size_t i = 0; i < source.size(); ++i) gx[source[i]] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const Shape& in = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t extent = in[axis];
  Shape out_shape = in;
  out_shape[axis] = length;
  const auto xd = x.data();
  std::vector<T> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * extent + start) * inner), length * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  auto* px = x.impl().get();
  return make_result<T>("slice", std::move(out_shape), std::move(out), {x},
                        [px, outer, inner, extent, start, length](const TensorImpl<T>& self) {
                          T* gx = px->grad_target();
                          if (!gx) return;
                          for (std::size_t o = 0; o < outer; ++o) {
                            T* dst = gx + (o * extent + start) * inner;
                            const T* src = self.grad.data() + o * length * inner;
                            for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                          }
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(first));
    total += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    offsets.push_back(offset);
    offset += len;
  }
  std::vector<TensorImpl<T>*> impls;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    impls.push_back(p.impl().get());
    lens.push_back(p.dim(axis));
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [impls, lens, offsets, outer, inner, total](const TensorImpl<T>& self) {
                          for (std::size_t k = 0; k < impls.size(); ++k) {
                            T* gp = impls[k]->grad_target();
                            if (!gp) continue;
                            for (std::size_t o = 0; o < outer; ++o) {
                              const T* src = self.grad.data() + (o * total + offsets[k]) * inner;
                              T* dst = gp + o * lens[k] * inner;
                              for (std::size_t i = 0; i < lens[k] * inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  std::vector<Tensor<T>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (axis > s.size()) throw ShapeError("stack: axis out of range");
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double eps) {
  Tensor<double> var = x.detach();
  var.set_requires_grad(true);
  Tensor<double> y = f(var);
  if (y.rank() != 0) y = reshape(y, Shape{});
  backward(y);
  std::vector<double> analytic(x.numel(), 0.0);
  if (var.has_grad()) std::copy(var.grad().begin(), var.grad().end(), analytic.begin());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor<double> plus = x.detach();
    Tensor<double> minus = x.detach();
    plus.mutable_data()[i] += eps;
    minus.mutable_data()[i] -= eps;
    const double numeric = (f(plus).data()[0] - f(minus).data()[0]) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

#define MOUTHNET_OPS_INSTANTIATE(T)                                                             \
  template Tensor<T> ew_binary(const Tensor<T>&, const Tensor<T>&, BinaryKind);                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> activation(const Tensor<T>&, ActivationKind);                              \
  template Tensor<T> reduce(const Tensor<T>&, ReduceKind, std::vector<std::size_t>);            \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> stack(const std::vector<Tensor<T>>&, std::size_t);

MOUTHNET_OPS_INSTANTIATE(float)
MOUTHNET_OPS_INSTANTIATE(double)

}  // namespace mouthnet

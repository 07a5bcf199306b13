#include "mouthnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mouthnet/ops.hpp"

namespace mouthnet {

namespace {

Dims3 spatial(const Shape& s) { return {s[2], s[3], s[4]}; }

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Conv3dParams<T>& p) {
  const Shape& is = input.shape();
  const Shape& ws = p.weight.shape();
  if (is.size() != 5) throw ShapeError("conv3d: expected (B,C,T,H,W) input, got " + shape_str(is));
  if (ws.size() != 5) throw ShapeError("conv3d: expected 5-d weight, got " + shape_str(ws));
  if (ws[1] != is[1])
    throw ShapeError("conv3d: input has " + std::to_string(is[1]) + " channels but weight expects " +
                     std::to_string(ws[1]));
  if (p.bias.shape() != Shape{ws[0]})
    throw ShapeError("conv3d: bias shape " + shape_str(p.bias.shape()) + " does not match " +
                     std::to_string(ws[0]) + " filters");
  const Dims3 kernel{ws[2], ws[3], ws[4]};
  for (int a = 0; a < 3; ++a)
    if (p.padding[a] > kernel[a]) throw ShapeError("conv3d: padding exceeds kernel extent");

  const auto g = kernels::conv3d_geometry(is[0], is[1], ws[0], spatial(is), kernel, p.stride, p.padding);
  std::vector<T> out(g.batch * g.out_channels * g.out_volume());
  kernels::conv3d_forward(g, input.data().data(), p.weight.data().data(), p.bias.data().data(), out.data());

  auto* pin = input.impl().get();
  auto* pw = p.weight.impl().get();
  auto* pb = p.bias.impl().get();
  return make_result<T>("conv3d", {g.batch, g.out_channels, g.out[0], g.out[1], g.out[2]}, std::move(out),
                        {input, p.weight, p.bias}, [g, pin, pw, pb](const TensorImpl<T>& self) {
                          const T* gout = self.grad.data();
                          if (T* gin = pin->grad_target()) kernels::conv3d_backward_input(g, gout, pw->data.data(), gin);
                          T* gw = pw->grad_target();
                          T* gb = pb->grad_target();
                          if (gw || gb) kernels::conv3d_backward_weight(g, gout, pin->data.data(), gw, gb);
                        });
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& input, Dims3 kernel, Dims3 stride, Dims3 padding) {
  const Shape& is = input.shape();
  if (is.size() != 5) throw ShapeError("maxpool3d: expected (B,C,T,H,W) input, got " + shape_str(is));
  const auto g = kernels::pool3d_geometry(is[0], is[1], spatial(is), kernel, stride, padding);
  std::vector<T> out(g.batch * g.channels * g.out_volume());
  std::vector<std::size_t> argmax(out.size());
  kernels::maxpool3d_forward(g, input.data().data(), out.data(), argmax.data());
  auto* pin = input.impl().get();
  return make_result<T>("maxpool3d", {g.batch, g.channels, g.out[0], g.out[1], g.out[2]}, std::move(out), {input},
                        [g, pin, argmax = std::move(argmax)](const TensorImpl<T>& self) {
                          if (T* gin = pin->grad_target())
                            kernels::maxpool3d_backward(g, self.grad.data(), argmax.data(), gin);
                        });
}

template <typename T>
BatchNormState<T> BatchNormState<T>::create(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor<T>::full({channels}, T(1));
  s.beta = Tensor<T>::zeros({channels});
  s.running_mean = Tensor<T>::zeros({channels});
  s.running_var = Tensor<T>::full({channels}, T(1));
  s.gamma.set_requires_grad(true);
  s.beta.set_requires_grad(true);
  return s;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, bool training) {
  const Shape& is = input.shape();
  if (is.size() < 2) throw ShapeError("batchnorm: expected (B,C,...) input, got " + shape_str(is));
  const std::size_t batch = is[0], channels = is[1];
  if (state.gamma.shape() != Shape{channels})
    throw ShapeError("batchnorm: state has " + std::to_string(state.gamma.numel()) + " channels, input " +
                     shape_str(is));
  std::size_t inner = 1;
  for (std::size_t d = 2; d < is.size(); ++d) inner *= is[d];
  const std::size_t count = batch * inner;

  const auto x = input.data();
  const auto gamma = state.gamma.data();
  const auto beta = state.beta.data();
  std::vector<T> xhat(x.size());
  std::vector<T> invstd(channels);
  std::vector<T> out(x.size());

  for (std::size_t c = 0; c < channels; ++c) {
    T mu, var;
    if (training) {
      double acc = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < inner; ++i) acc += x[(b * channels + c) * inner + i];
      mu = static_cast<T>(acc / static_cast<double>(count));
      double sq = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = x[(b * channels + c) * inner + i] - mu;
          sq += d * d;
        }
      var = static_cast<T>(sq / static_cast<double>(count));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : sq;
      auto rm = state.running_mean.mutable_data();
      auto rv = state.running_var.mutable_data();
      rm[c] = static_cast<T>((1.0 - state.momentum) * rm[c] + state.momentum * mu);
      rv[c] = static_cast<T>((1.0 - state.momentum) * rv[c] + state.momentum * unbiased);
    } else {
      mu = state.running_mean.data()[c];
      var = state.running_var.data()[c];
    }
    invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + state.eps));
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (b * channels + c) * inner + i;
        xhat[k] = (x[k] - mu) * invstd[c];
        out[k] = gamma[c] * xhat[k] + beta[c];
      }
  }

  auto* pin = input.impl().get();
  auto* pg = state.gamma.impl().get();
  auto* pbeta = state.beta.impl().get();
  return make_result<T>(
      "batchnorm", is, std::move(out), {input, state.gamma, state.beta},
      [pin, pg, pbeta, training, batch, channels, inner, count, xhat = std::move(xhat),
       invstd = std::move(invstd)](const TensorImpl<T>& self) {
        const auto& dy = self.grad;
        T* gx = pin->grad_target();
        T* ggamma = pg->grad_target();
        T* gbeta = pbeta->grad_target();
        const T n = static_cast<T>(count);
        for (std::size_t c = 0; c < channels; ++c) {
          T sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = (b * channels + c) * inner + i;
              sum_dy += dy[k];
              sum_dy_xhat += dy[k] * xhat[k];
            }
          if (ggamma) ggamma[c] += sum_dy_xhat;
          if (gbeta) gbeta[c] += sum_dy;
          if (!gx) continue;
          const T gm = pg->data[c];
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = (b * channels + c) * inner + i;
              if (training)
                gx[k] += gm * invstd[c] / n * (n * dy[k] - sum_dy - xhat[k] * sum_dy_xhat);
              else
                gx[k] += gm * invstd[c] * dy[k];
            }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) || bias.shape() != Shape{weight.dim(0)})
    throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                     ", bias " + shape_str(bias.shape()) + " are incompatible");
  const std::size_t b = x.dim(0), d = x.dim(1), k = weight.dim(0);
  std::vector<T> out(b * k, T(0));
  kernels::gemm_nt(b, k, d, x.data().data(), weight.data().data(), out.data());
  const auto bd = bias.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bd[j];
  auto* px = x.impl().get();
  auto* pw = weight.impl().get();
  auto* pb = bias.impl().get();
  return make_result<T>("linear", {b, k}, std::move(out), {x, weight, bias},
                        [px, pw, pb, b, d, k](const TensorImpl<T>& self) {
                          const T* dy = self.grad.data();
                          if (T* gx = px->grad_target()) kernels::gemm_nn(b, d, k, dy, pw->data.data(), gx);
                          if (T* gw = pw->grad_target()) kernels::gemm_tn(k, d, b, dy, px->data.data(), gw);
                          if (T* gb = pb->grad_target())
                            for (std::size_t i = 0; i < b; ++i)
                              for (std::size_t j = 0; j < k; ++j) gb[j] += dy[i * k + j];
                        });
}

namespace {

template <typename T>
Tensor<T> gru_direction(const Tensor<T>& seq, const GruDirection<T>& p, std::size_t hidden, bool reverse,
                        Tensor<T>& final_state) {
  const std::size_t batch = seq.dim(0), steps = seq.dim(1), width = seq.dim(2);
  const std::size_t H = hidden;
  Tensor<T> projected = linear(reshape(seq, {batch * steps, width}), p.w_ih, p.b_ih);
  projected = reshape(projected, {batch, steps, 3 * H});

  std::vector<Tensor<T>> outputs(steps);
  Tensor<T> h = Tensor<T>::zeros({batch, H});
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    Tensor<T> gi = reshape(slice(projected, 1, t, 1), {batch, 3 * H});
    Tensor<T> gh = linear(h, p.w_hh, p.b_hh);
    Tensor<T> r = sigmoid(add(slice(gi, 1, 0, H), slice(gh, 1, 0, H)));
    Tensor<T> z = sigmoid(add(slice(gi, 1, H, H), slice(gh, 1, H, H)));
    Tensor<T> n = tanh(add(slice(gi, 1, 2 * H, H), mul(r, slice(gh, 1, 2 * H, H))));
    h = add(n, mul(z, sub(h, n)));  // (1 - z) * n + z * h
    outputs[t] = h;
  }
  final_state = h;
  return stack(outputs, 1);
}

}  // namespace

template <typename T>
GruResult<T> gru_bidirectional(const Tensor<T>& seq, const GruParams<T>& p) {
  if (seq.rank() != 3) throw ShapeError("gru: expected (B,T,D) sequence, got " + shape_str(seq.shape()));
  if (seq.dim(1) == 0) throw ShapeError("gru: empty sequence");
  if (p.layers.empty()) throw ShapeError("gru: no layers");
  GruResult<T> result;
  Tensor<T> x = seq;
  for (const auto& layer : p.layers) {
    for (const auto& dir : layer)
      if (dir.w_ih.rank() != 2 || dir.w_ih.dim(1) != x.dim(2) || dir.w_ih.dim(0) != 3 * p.hidden)
        throw ShapeError("gru: input width " + std::to_string(x.dim(2)) + " does not match w_ih " +
                         shape_str(dir.w_ih.shape()));
    std::array<Tensor<T>, 2> finals;
    Tensor<T> fwd = gru_direction(x, layer[0], p.hidden, false, finals[0]);
    Tensor<T> bwd = gru_direction(x, layer[1], p.hidden, true, finals[1]);
    x = concat<T>({fwd, bwd}, 2);
    result.finals.push_back(finals);
  }
  result.outputs = x;
  return result;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expected (B,K) logits");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(b));
  for (auto l : labels)
    if (l >= k)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(k) + ")");
  const auto z = logits.data();
  std::vector<T> prob(b * k);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = z.data() + i * k;
    const T mx = *std::max_element(row, row + k);
    double denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j)
      prob[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx) - log_denom));
    total += log_denom - static_cast<double>(row[labels[i]] - mx);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  auto* pz = logits.impl().get();
  return make_result<T>("softmax_cross_entropy", Shape{}, {static_cast<T>(total / static_cast<double>(b))},
                        {logits}, [pz, b, k, prob = std::move(prob), lab = std::move(lab)](const TensorImpl<T>& self) {
                          T* gz = pz->grad_target();
                          if (!gz) return;
                          const T g = self.grad[0] / static_cast<T>(b);
                          for (std::size_t i = 0; i < b; ++i)
                            for (std::size_t j = 0; j < k; ++j)
                              gz[i * k + j] += g * (prob[i * k + j] - (j == lab[i] ? T(1) : T(0)));
                        });
}

template <typename T>
Tensor<T> gradient_reversal(const Tensor<T>& x, T lambda) {
  if (lambda < T(0)) throw std::invalid_argument("gradient_reversal: lambda must be non-negative");
  std::vector<T> out(x.data().begin(), x.data().end());
  auto* px = x.impl().get();
  return make_result<T>("gradient_reversal", x.shape(), std::move(out), {x}, [px, lambda](const TensorImpl<T>& self) {
    if (T* gx = px->grad_target())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += -lambda * self.grad[i];
  });
}

#define MOUTHNET_LAYERS_INSTANTIATE(T)                                                        \
  template Tensor<T> conv3d(const Tensor<T>&, const Conv3dParams<T>&);                        \
  template Tensor<T> maxpool3d(const Tensor<T>&, Dims3, Dims3, Dims3);                        \
  template struct BatchNormState<T>;                                                          \
  template Tensor<T> batchnorm(const Tensor<T>&, BatchNormState<T>&, bool);                   \
  template GruResult<T> gru_bidirectional(const Tensor<T>&, const GruParams<T>&);             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const std::size_t>);   \
  template Tensor<T> gradient_reversal(const Tensor<T>&, T);

MOUTHNET_LAYERS_INSTANTIATE(float)
MOUTHNET_LAYERS_INSTANTIATE(double)

}  // namespace mouthnet

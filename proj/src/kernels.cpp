#include "mouthnet/kernels.hpp"

#include <atomic>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mouthnet/tensor.hpp"

namespace mouthnet::kernels {

namespace {

std::atomic<Mode> g_mode{Mode::parallel};
std::atomic<int> g_threads{0};

using isize = std::ptrdiff_t;

// Output indices o in [lo, hi) for which o*stride - pad + k lands inside [0, in).
struct Range {
  std::size_t lo, hi;
};

Range valid_range(std::size_t out, std::size_t stride, std::size_t pad, std::size_t k, std::size_t in) {
  const isize s = static_cast<isize>(stride);
  const isize shift = static_cast<isize>(k) - static_cast<isize>(pad);
  // need o*s + shift >= 0 and o*s + shift <= in - 1
  isize lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  const isize top = static_cast<isize>(in) - 1 - shift;
  if (top < 0) return {0, 0};
  isize hi = top / s + 1;
  if (hi > static_cast<isize>(out)) hi = static_cast<isize>(out);
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void conv_forward_plane(const Conv3dGeometry& g, const T* input, const T* weight, const T* bias,
                        T* output, std::size_t b, std::size_t oc) {
  const auto [T_, H, W] = g.in;
  const auto [OT, OH, OW] = g.out;
  const auto [kT, kH, kW] = g.kernel;
  const auto [sT, sH, sW] = g.stride;
  const auto [pT, pH, pW] = g.padding;
  T* o = output + (b * g.out_channels + oc) * g.out_volume();
  const T init = bias ? bias[oc] : T(0);
  for (std::size_t i = 0; i < g.out_volume(); ++i) o[i] = init;

  for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
    const T* x = input + (b * g.in_channels + ic) * g.in_volume();
    const T* wk = weight + (oc * g.in_channels + ic) * g.kernel_volume();
    for (std::size_t kt = 0; kt < kT; ++kt) {
      const Range rt = valid_range(OT, sT, pT, kt, T_);
      for (std::size_t kh = 0; kh < kH; ++kh) {
        const Range rh = valid_range(OH, sH, pH, kh, H);
        for (std::size_t kw = 0; kw < kW; ++kw) {
          const Range rw = valid_range(OW, sW, pW, kw, W);
          const T wv = wk[(kt * kH + kh) * kW + kw];
          for (std::size_t ot = rt.lo; ot < rt.hi; ++ot) {
            const std::size_t it = ot * sT + kt - pT;
            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
              const std::size_t ih = oh * sH + kh - pH;
              const T* xrow = x + (it * H + ih) * W;
              T* orow = o + (ot * OH + oh) * OW;
              for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += wv * xrow[ow * sW + kw - pW];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_input_plane(const Conv3dGeometry& g, const T* grad_out, const T* weight,
                               T* grad_in, std::size_t b, std::size_t ic) {
  const auto [T_, H, W] = g.in;
  const auto [OT, OH, OW] = g.out;
  const auto [kT, kH, kW] = g.kernel;
  const auto [sT, sH, sW] = g.stride;
  const auto [pT, pH, pW] = g.padding;
  T* gi = grad_in + (b * g.in_channels + ic) * g.in_volume();
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    const T* go = grad_out + (b * g.out_channels + oc) * g.out_volume();
    const T* wk = weight + (oc * g.in_channels + ic) * g.kernel_volume();
    for (std::size_t kt = 0; kt < kT; ++kt) {
      const Range rt = valid_range(OT, sT, pT, kt, T_);
      for (std::size_t kh = 0; kh < kH; ++kh) {
        const Range rh = valid_range(OH, sH, pH, kh, H);
        for (std::size_t kw = 0; kw < kW; ++kw) {
          const Range rw = valid_range(OW, sW, pW, kw, W);
          const T wv = wk[(kt * kH + kh) * kW + kw];
          for (std::size_t ot = rt.lo; ot < rt.hi; ++ot) {
            const std::size_t it = ot * sT + kt - pT;
            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
              const std::size_t ih = oh * sH + kh - pH;
              T* girow = gi + (it * H + ih) * W;
              const T* gorow = go + (ot * OH + oh) * OW;
              for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) girow[ow * sW + kw - pW] += wv * gorow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_weight_pair(const Conv3dGeometry& g, const T* grad_out, const T* input,
                               T* grad_weight, std::size_t oc, std::size_t ic) {
  const auto [T_, H, W] = g.in;
  const auto [OT, OH, OW] = g.out;
  const auto [kT, kH, kW] = g.kernel;
  const auto [sT, sH, sW] = g.stride;
  const auto [pT, pH, pW] = g.padding;
  T* gw = grad_weight + (oc * g.in_channels + ic) * g.kernel_volume();
  for (std::size_t kt = 0; kt < kT; ++kt) {
    const Range rt = valid_range(OT, sT, pT, kt, T_);
    for (std::size_t kh = 0; kh < kH; ++kh) {
      const Range rh = valid_range(OH, sH, pH, kh, H);
      for (std::size_t kw = 0; kw < kW; ++kw) {
        const Range rw = valid_range(OW, sW, pW, kw, W);
        T acc = 0;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* go = grad_out + (b * g.out_channels + oc) * g.out_volume();
          const T* x = input + (b * g.in_channels + ic) * g.in_volume();
          for (std::size_t ot = rt.lo; ot < rt.hi; ++ot) {
            const std::size_t it = ot * sT + kt - pT;
            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
              const std::size_t ih = oh * sH + kh - pH;
              const T* xrow = x + (it * H + ih) * W;
              const T* gorow = go + (ot * OH + oh) * OW;
              for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) acc += gorow[ow] * xrow[ow * sW + kw - pW];
            }
          }
        }
        gw[(kt * kH + kh) * kW + kw] += acc;
      }
    }
  }
}

template <typename T>
void conv_backward_bias_channel(const Conv3dGeometry& g, const T* grad_out, T* grad_bias, std::size_t oc) {
  T acc = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* go = grad_out + (b * g.out_channels + oc) * g.out_volume();
    for (std::size_t i = 0; i < g.out_volume(); ++i) acc += go[i];
  }
  grad_bias[oc] += acc;
}

// Padded cells are never candidates; ties resolve to the first cell visited.
template <typename T>
void pool_forward_plane(const Pool3dGeometry& g, const T* input, T* output, std::size_t* argmax,
                        std::size_t plane) {
  const auto [T_, H, W] = g.in;
  const auto [OT, OH, OW] = g.out;
  const T* x = input + plane * g.in_volume();
  T* o = output + plane * g.out_volume();
  std::size_t* am = argmax + plane * g.out_volume();
  for (std::size_t ot = 0; ot < OT; ++ot) {
    for (std::size_t oh = 0; oh < OH; ++oh) {
      for (std::size_t ow = 0; ow < OW; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = kNoArgmax;
        for (std::size_t kt = 0; kt < g.kernel[0]; ++kt) {
          const isize it = static_cast<isize>(ot * g.stride[0] + kt) - static_cast<isize>(g.padding[0]);
          if (it < 0 || it >= static_cast<isize>(T_)) continue;
          for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
            const isize ih = static_cast<isize>(oh * g.stride[1] + kh) - static_cast<isize>(g.padding[1]);
            if (ih < 0 || ih >= static_cast<isize>(H)) continue;
            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
              const isize iw = static_cast<isize>(ow * g.stride[2] + kw) - static_cast<isize>(g.padding[2]);
              if (iw < 0 || iw >= static_cast<isize>(W)) continue;
              const std::size_t idx = (static_cast<std::size_t>(it) * H + static_cast<std::size_t>(ih)) * W +
                                      static_cast<std::size_t>(iw);
              if (best_idx == kNoArgmax || x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
        }
        const std::size_t oi = (ot * OH + oh) * OW + ow;
        o[oi] = best_idx == kNoArgmax ? T(0) : best;
        am[oi] = best_idx;
      }
    }
  }
}

template <typename T>
void pool_backward_plane(const Pool3dGeometry& g, const T* grad_out, const std::size_t* argmax,
                         T* grad_in, std::size_t plane) {
  const T* go = grad_out + plane * g.out_volume();
  const std::size_t* am = argmax + plane * g.out_volume();
  T* gi = grad_in + plane * g.in_volume();
  for (std::size_t i = 0; i < g.out_volume(); ++i)
    if (am[i] != kNoArgmax) gi[am[i]] += go[i];
}

template <typename T>
void gemm_nn_row(std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t i) {
  T* crow = c + i * n;
  const T* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T av = arow[p];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
void gemm_nt_row(std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t i) {
  T* crow = c + i * n;
  const T* arow = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const T* brow = b + j * k;
    T acc = 0;
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] += acc;
  }
}

template <typename T>
void gemm_tn_row(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t i) {
  T* crow = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a[p * m + i];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

int thread_count() {
#ifdef _OPENMP
  const int n = g_threads.load();
  return n > 0 ? n : omp_get_max_threads();
#else
  return 1;
#endif
}

// Runs body(i) for i in [0, n). The parallel flavour only changes which
// thread executes an index, never the arithmetic inside it.
template <typename Body>
void for_each_serial(std::size_t n, Body&& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

template <typename Body>
void for_each_parallel(std::size_t n, Body&& body) {
  if (n < 2) return for_each_serial(n, body);
  const isize count = static_cast<isize>(n);
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (isize i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace

void set_mode(Mode m) { g_mode.store(m); }
Mode mode() { return g_mode.load(); }
void set_num_threads(int n) { g_threads.store(n); }
int num_threads() { return thread_count(); }

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

Dims3 output_dims(const char* what, Dims3 in, Dims3 kernel, Dims3 stride, Dims3 padding) {
  Dims3 out{};
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] == 0 || stride[a] == 0)
      throw ShapeError(std::string(what) + ": kernel and stride must be positive");
    out[a] = pooled_extent(in[a], kernel[a], stride[a], padding[a]);
    if (out[a] == 0)
      throw ShapeError(std::string(what) + ": non-positive output extent on axis " + std::to_string(a) +
                       " (input " + std::to_string(in[a]) + ", kernel " + std::to_string(kernel[a]) +
                       ", padding " + std::to_string(padding[a]) + ")");
  }
  return out;
}

}  // namespace

Conv3dGeometry conv3d_geometry(std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                               Dims3 in, Dims3 kernel, Dims3 stride, Dims3 padding) {
  Conv3dGeometry g;
  g.batch = batch;
  g.in_channels = in_channels;
  g.out_channels = out_channels;
  g.in = in;
  g.kernel = kernel;
  g.stride = stride;
  g.padding = padding;
  g.out = output_dims("conv3d", in, kernel, stride, padding);
  return g;
}

Pool3dGeometry pool3d_geometry(std::size_t batch, std::size_t channels, Dims3 in, Dims3 kernel,
                               Dims3 stride, Dims3 padding) {
  Pool3dGeometry g;
  g.batch = batch;
  g.channels = channels;
  g.in = in;
  g.kernel = kernel;
  g.stride = stride;
  g.padding = padding;
  g.out = output_dims("maxpool3d", in, kernel, stride, padding);
  return g;
}

#define MOUTHNET_KERNEL_IMPLS(NS, FOR_EACH, T)                                                        \
  namespace NS {                                                                                      \
  void conv3d_forward(const Conv3dGeometry& g, const T* input, const T* weight, const T* bias,        \
                      T* output) {                                                                    \
    FOR_EACH(g.batch * g.out_channels, [&](std::size_t i) {                                           \
      conv_forward_plane(g, input, weight, bias, output, i / g.out_channels, i % g.out_channels);     \
    });                                                                                               \
  }                                                                                                   \
  void conv3d_backward_input(const Conv3dGeometry& g, const T* grad_out, const T* weight,            \
                             T* grad_in) {                                                            \
    FOR_EACH(g.batch * g.in_channels, [&](std::size_t i) {                                            \
      conv_backward_input_plane(g, grad_out, weight, grad_in, i / g.in_channels, i % g.in_channels);  \
    });                                                                                               \
  }                                                                                                   \
  void conv3d_backward_weight(const Conv3dGeometry& g, const T* grad_out, const T* input,            \
                              T* grad_weight, T* grad_bias) {                                         \
    if (grad_weight)                                                                                  \
      FOR_EACH(g.out_channels * g.in_channels, [&](std::size_t i) {                                   \
        conv_backward_weight_pair(g, grad_out, input, grad_weight, i / g.in_channels,                 \
                                  i % g.in_channels);                                                 \
      });                                                                                             \
    if (grad_bias)                                                                                    \
      FOR_EACH(g.out_channels,                                                                        \
               [&](std::size_t oc) { conv_backward_bias_channel(g, grad_out, grad_bias, oc); });      \
  }                                                                                                   \
  void maxpool3d_forward(const Pool3dGeometry& g, const T* input, T* output, std::size_t* argmax) {  \
    FOR_EACH(g.batch * g.channels,                                                                    \
             [&](std::size_t p) { pool_forward_plane(g, input, output, argmax, p); });                \
  }                                                                                                   \
  void maxpool3d_backward(const Pool3dGeometry& g, const T* grad_out, const std::size_t* argmax,     \
                          T* grad_in) {                                                               \
    FOR_EACH(g.batch * g.channels,                                                                    \
             [&](std::size_t p) { pool_backward_plane(g, grad_out, argmax, grad_in, p); });           \
  }                                                                                                   \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {          \
    FOR_EACH(m, [&](std::size_t i) { gemm_nn_row(n, k, a, b, c, i); });                               \
  }                                                                                                   \
  void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {          \
    FOR_EACH(m, [&](std::size_t i) { gemm_nt_row(n, k, a, b, c, i); });                               \
  }                                                                                                   \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {          \
    FOR_EACH(m, [&](std::size_t i) { gemm_tn_row(m, n, k, a, b, c, i); });                            \
  }                                                                                                   \
  }

MOUTHNET_KERNEL_IMPLS(serial, for_each_serial, float)
MOUTHNET_KERNEL_IMPLS(serial, for_each_serial, double)
MOUTHNET_KERNEL_IMPLS(parallel, for_each_parallel, float)
MOUTHNET_KERNEL_IMPLS(parallel, for_each_parallel, double)

#undef MOUTHNET_KERNEL_IMPLS

#define MOUTHNET_DISPATCH(T)                                                                          \
  void conv3d_forward(const Conv3dGeometry& g, const T* input, const T* weight, const T* bias,        \
                      T* output) {                                                                    \
    mode() == Mode::serial ? serial::conv3d_forward(g, input, weight, bias, output)                   \
                           : parallel::conv3d_forward(g, input, weight, bias, output);                \
  }                                                                                                   \
  void conv3d_backward_input(const Conv3dGeometry& g, const T* grad_out, const T* weight,            \
                             T* grad_in) {                                                            \
    mode() == Mode::serial ? serial::conv3d_backward_input(g, grad_out, weight, grad_in)              \
                           : parallel::conv3d_backward_input(g, grad_out, weight, grad_in);           \
  }                                                                                                   \
  void conv3d_backward_weight(const Conv3dGeometry& g, const T* grad_out, const T* input,            \
                              T* grad_weight, T* grad_bias) {                                         \
    mode() == Mode::serial ? serial::conv3d_backward_weight(g, grad_out, input, grad_weight, grad_bias) \
                           : parallel::conv3d_backward_weight(g, grad_out, input, grad_weight, grad_bias); \
  }                                                                                                   \
  void maxpool3d_forward(const Pool3dGeometry& g, const T* input, T* output, std::size_t* argmax) {  \
    mode() == Mode::serial ? serial::maxpool3d_forward(g, input, output, argmax)                      \
                           : parallel::maxpool3d_forward(g, input, output, argmax);                   \
  }                                                                                                   \
  void maxpool3d_backward(const Pool3dGeometry& g, const T* grad_out, const std::size_t* argmax,     \
                          T* grad_in) {                                                               \
    mode() == Mode::serial ? serial::maxpool3d_backward(g, grad_out, argmax, grad_in)                 \
                           : parallel::maxpool3d_backward(g, grad_out, argmax, grad_in);              \
  }                                                                                                   \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {          \
    mode() == Mode::serial ? serial::gemm_nn(m, n, k, a, b, c) : parallel::gemm_nn(m, n, k, a, b, c); \
  }                                                                                                   \
  void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {          \
    mode() == Mode::serial ? serial::gemm_nt(m, n, k, a, b, c) : parallel::gemm_nt(m, n, k, a, b, c); \
  }                                                                                                   \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {          \
    mode() == Mode::serial ? serial::gemm_tn(m, n, k, a, b, c) : parallel::gemm_tn(m, n, k, a, b, c); \
  }

MOUTHNET_DISPATCH(float)
MOUTHNET_DISPATCH(double)

#undef MOUTHNET_DISPATCH

}  // namespace mouthnet::kernels

#pragma once

#include <array>
#include <cstddef>

namespace mouthnet::kernels {

using Dims3 = std::array<std::size_t, 3>;  // (T, H, W)

// Which implementation the dispatching entry points use. Both produce
// bitwise-identical results: work is split over independent output planes
// and every plane is reduced in the same order regardless of thread count.
enum class Mode { serial, parallel };

void set_mode(Mode mode);
Mode mode();
// <= 0 means "OpenMP default".
void set_num_threads(int n);
int num_threads();
bool openmp_available();

// floor((in + 2*pad - k) / stride) + 1, or 0 if the window never fits.
std::size_t pooled_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

struct Conv3dGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Dims3 in{};
  Dims3 kernel{};
  Dims3 stride{};
  Dims3 padding{};
  Dims3 out{};

  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

struct Pool3dGeometry {
  std::size_t batch = 0;
  std::size_t channels = 0;
  Dims3 in{};
  Dims3 kernel{};
  Dims3 stride{};
  Dims3 padding{};
  Dims3 out{};

  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
};

// Throws ShapeError when an output extent would be non-positive.
Conv3dGeometry conv3d_geometry(std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                               Dims3 in, Dims3 kernel, Dims3 stride, Dims3 padding);
Pool3dGeometry pool3d_geometry(std::size_t batch, std::size_t channels, Dims3 in, Dims3 kernel,
                               Dims3 stride, Dims3 padding);

inline constexpr std::size_t kNoArgmax = static_cast<std::size_t>(-1);

// Layouts: input (B, C_in, T, H, W), weight (C_out, C_in, kT, kH, kW),
// output (B, C_out, T', H', W'), all row-major. Backward kernels accumulate.
#define MOUTHNET_KERNEL_DECLS(T)                                                                   \
  void conv3d_forward(const Conv3dGeometry& g, const T* input, const T* weight, const T* bias,     \
                      T* output);                                                                  \
  void conv3d_backward_input(const Conv3dGeometry& g, const T* grad_out, const T* weight,         \
                             T* grad_in);                                                          \
  void conv3d_backward_weight(const Conv3dGeometry& g, const T* grad_out, const T* input,         \
                              T* grad_weight, T* grad_bias);                                       \
  void maxpool3d_forward(const Pool3dGeometry& g, const T* input, T* output, std::size_t* argmax); \
  void maxpool3d_backward(const Pool3dGeometry& g, const T* grad_out, const std::size_t* argmax,  \
                          T* grad_in);                                                             \
  /* C(m,n) += A(m,k) B(k,n) */                                                                    \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);        \
  /* C(m,n) += A(m,k) B(n,k)^T */                                                                  \
  void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);        \
  /* C(m,n) += A(k,m)^T B(k,n) */                                                                  \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

namespace serial {
MOUTHNET_KERNEL_DECLS(float)
MOUTHNET_KERNEL_DECLS(double)
}  // namespace serial

namespace parallel {
MOUTHNET_KERNEL_DECLS(float)
MOUTHNET_KERNEL_DECLS(double)
}  // namespace parallel

// Dispatch on mode().
MOUTHNET_KERNEL_DECLS(float)
MOUTHNET_KERNEL_DECLS(double)

#undef MOUTHNET_KERNEL_DECLS

}  // namespace mouthnet::kernels

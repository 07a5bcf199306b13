#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mouthnet/kernels.hpp"
#include "mouthnet/tensor.hpp"

namespace mouthnet {

using Dims3 = kernels::Dims3;

template <typename T>
struct Conv3dParams {
  Tensor<T> weight;  // (C_out, C_in, kT, kH, kW)
  Tensor<T> bias;    // (C_out)
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 0, 0};
};

// Cross-correlation with zero padding. input (B, C_in, T, H, W).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Conv3dParams<T>& p);

// Windowed max; padded cells are never selected.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& input, Dims3 kernel, Dims3 stride, Dims3 padding);

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState create(std::size_t channels);
};

// Per-channel normalisation over every axis except 1. In training mode batch
// statistics are used and the running estimates (unbiased variance) are
// updated; otherwise the running estimates are used and nothing is mutated.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, bool training);

// Gate blocks occupy rows in the order reset | update | candidate.
template <typename T>
struct GruDirection {
  Tensor<T> w_ih;  // (3H, D_in)
  Tensor<T> w_hh;  // (3H, H)
  Tensor<T> b_ih;  // (3H)
  Tensor<T> b_hh;  // (3H)
};

template <typename T>
struct GruParams {
  std::size_t hidden = 0;
  // layers[l][0] forward, layers[l][1] backward
  std::vector<std::array<GruDirection<T>, 2>> layers;
};

template <typename T>
struct GruResult {
  Tensor<T> outputs;                           // (B, T, 2H) from the last layer
  std::vector<std::array<Tensor<T>, 2>> finals;  // per layer: forward at t=T-1, backward at t=0
};

template <typename T>
GruResult<T> gru_bidirectional(const Tensor<T>& seq, const GruParams<T>& p);

// x (B, D), weight (K, D), bias (K) -> x W^T + b
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels);

// Identity forward; backward scales the incoming gradient by -lambda.
template <typename T>
Tensor<T> gradient_reversal(const Tensor<T>& x, T lambda);

}  // namespace mouthnet

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mouthnet/layers.hpp"
#include "mouthnet/rng.hpp"

namespace mouthnet {

enum class ModelKind { baseline, dann, mtl };
enum class RunMode { train, eval };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

// Conv3D/Bi-GRU classifier hyperparameters. Defaults are the full-size
// configuration: a (1, 30, 96, 96) clip reduced to 30 steps of 32*6*6
// features, two Bi-GRU layers of width 256, and a 15-way head.
struct BaselineSpec {
  std::size_t in_channels = 1;
  std::size_t frames = 30;
  std::size_t height = 96;
  std::size_t width = 96;
  std::array<std::size_t, 3> conv_channels{16, 16, 32};
  Dims3 conv_kernel{3, 5, 5};
  Dims3 conv_padding{1, 2, 2};
  std::array<Dims3, 3> conv_strides{{{1, 2, 2}, {1, 1, 1}, {1, 1, 1}}};
  Dims3 pool_kernel{3, 5, 5};
  Dims3 pool_stride{1, 2, 2};
  Dims3 pool_padding{1, 2, 2};
  std::size_t gru_hidden = 256;
  std::size_t gru_layers = 2;
  std::size_t num_classes = 15;

  Shape input_shape(std::size_t batch) const { return {batch, in_channels, frames, height, width}; }
  std::size_t summary_width() const { return 2 * gru_hidden; }
  // Per-timestep width fed to the GRU. Throws ShapeError on underflow.
  std::size_t trunk_feature_width() const;

  bool operator==(const BaselineSpec&) const = default;
};

struct ShapeStage {
  std::string name;
  Shape shape;
};

// Static shape trace: input, conv/pool stages, sequence, summary, logits.
std::vector<ShapeStage> shape_trace(const BaselineSpec& spec, std::size_t batch);

template <typename T>
struct Head {
  std::string name;
  std::size_t width = 0;
  bool reversed = false;  // attached through gradient reversal
  Tensor<T> weight;       // (width, summary)
  Tensor<T> bias;         // (width)
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// One network: shared trunk (input norm, three conv blocks, Bi-GRU) and any
// number of linear heads on the trunk summary.
template <typename T>
class ModelAssembly {
 public:
  ModelKind kind = ModelKind::baseline;
  BaselineSpec spec;
  BatchNormState<T> input_norm;
  std::array<Conv3dParams<T>, 3> convs;
  std::array<BatchNormState<T>, 3> block_norms;
  GruParams<T> gru;
  std::vector<Head<T>> heads;

  NamedTensors<T> named_parameters() const;  // trunk first, then heads in registry order
  NamedTensors<T> trunk_parameters() const;
  NamedTensors<T> named_buffers() const;     // batch-norm running statistics

  bool has_head(std::string_view name) const;
  const Head<T>& head(std::string_view name) const;
  Head<T>& head(std::string_view name);
  std::vector<std::string> head_names() const;

  void zero_grad();
};

template <typename T>
ModelAssembly<T> build_baseline(const BaselineSpec& spec, const Rng& rng);
template <typename T>
ModelAssembly<T> build_dann(const BaselineSpec& spec, const Rng& rng);
template <typename T>
ModelAssembly<T> build_mtl(const BaselineSpec& spec, const std::vector<std::string>& tasks, const Rng& rng);

template <typename T>
struct TrunkOutput {
  Tensor<T> sequence;  // (B, frames, feature width)
  Tensor<T> summary;   // (B, 2H): last forward state | last backward state of the top layer
};

template <typename T>
TrunkOutput<T> forward_trunk(ModelAssembly<T>& m, const Tensor<T>& batch, RunMode mode);

template <typename T>
Tensor<T> forward_head(const ModelAssembly<T>& m, const Tensor<T>& summary, std::string_view head, T lambda = T(1));

template <typename T>
Tensor<T> forward_baseline(ModelAssembly<T>& m, const Tensor<T>& batch, RunMode mode);

template <typename T>
struct DannLogits {
  Tensor<T> class_logits;
  Tensor<T> domain_logits;
};

template <typename T>
DannLogits<T> forward_dann(ModelAssembly<T>& m, const Tensor<T>& batch, T lambda, RunMode mode);

template <typename T>
Tensor<T> forward_mtl(ModelAssembly<T>& m, const Tensor<T>& batch, std::string_view task, RunMode mode);

// Fresh head weights for a baseline model; the trunk is untouched and every
// parameter stays trainable. num_classes == 0 keeps the current width.
template <typename T>
void reinit_head(ModelAssembly<T>& m, const Rng& rng, std::size_t num_classes = 0);

// FNV-1a over the raw bytes of the given tensors, in order.
template <typename T>
std::uint64_t checksum(const NamedTensors<T>& tensors);

}  // namespace mouthnet

#include "mouthnet/models.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mouthnet/ops.hpp"

namespace mouthnet {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::baseline:
      return "baseline";
    case ModelKind::dann:
      return "dann";
    case ModelKind::mtl:
      return "mtl";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "baseline") return ModelKind::baseline;
  if (text == "dann") return ModelKind::dann;
  if (text == "mtl") return ModelKind::mtl;
  throw std::invalid_argument("unknown model kind '" + std::string(text) + "'");
}

std::vector<ShapeStage> shape_trace(const BaselineSpec& spec, std::size_t batch) {
  std::vector<ShapeStage> stages;
  Shape s = spec.input_shape(batch);
  stages.push_back({"input", s});
  std::size_t channels = spec.in_channels;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto cg = kernels::conv3d_geometry(batch, channels, spec.conv_channels[i], {s[2], s[3], s[4]},
                                             spec.conv_kernel, spec.conv_strides[i], spec.conv_padding);
    channels = spec.conv_channels[i];
    s = {batch, channels, cg.out[0], cg.out[1], cg.out[2]};
    stages.push_back({"conv" + std::to_string(i + 1), s});
    const auto pg = kernels::pool3d_geometry(batch, channels, cg.out, spec.pool_kernel, spec.pool_stride,
                                             spec.pool_padding);
    s = {batch, channels, pg.out[0], pg.out[1], pg.out[2]};
    stages.push_back({"pool" + std::to_string(i + 1), s});
  }
  stages.push_back({"sequence", {batch, s[2], s[1] * s[3] * s[4]}});
  stages.push_back({"summary", {batch, spec.summary_width()}});
  stages.push_back({"logits", {batch, spec.num_classes}});
  return stages;
}

std::size_t BaselineSpec::trunk_feature_width() const {
  const auto trace = shape_trace(*this, 1);
  return trace[7].shape[2];
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng rng) {
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  Tensor<T> t(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Head<T> make_head(std::string name, std::size_t width, std::size_t in, bool reversed, const Rng& rng) {
  Head<T> h;
  h.weight = uniform_tensor<T>({width, in}, std::sqrt(1.0 / static_cast<double>(in)),
                               rng.substream("head." + name + ".weight"));
  h.bias = zero_param<T>({width});
  h.name = std::move(name);
  h.width = width;
  h.reversed = reversed;
  return h;
}

template <typename T>
ModelAssembly<T> build_trunk(const BaselineSpec& spec, const Rng& rng) {
  const std::size_t feature_width = spec.trunk_feature_width();  // validates shapes
  if (spec.gru_hidden == 0 || spec.gru_layers == 0 || spec.num_classes == 0)
    throw ShapeError("model spec: GRU width, GRU depth and class count must be positive");

  ModelAssembly<T> m;
  m.spec = spec;
  m.input_norm = BatchNormState<T>::create(spec.in_channels);
  std::size_t channels = spec.in_channels;
  const std::size_t kvol = spec.conv_kernel[0] * spec.conv_kernel[1] * spec.conv_kernel[2];
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    const std::size_t out = spec.conv_channels[i];
    auto& c = m.convs[i];
    c.weight = uniform_tensor<T>({out, channels, spec.conv_kernel[0], spec.conv_kernel[1], spec.conv_kernel[2]},
                                 std::sqrt(1.0 / static_cast<double>(channels * kvol)),
                                 rng.substream(name + ".weight"));
    c.bias = zero_param<T>({out});
    c.stride = spec.conv_strides[i];
    c.padding = spec.conv_padding;
    m.block_norms[i] = BatchNormState<T>::create(out);
    channels = out;
  }

  const std::size_t H = spec.gru_hidden;
  const double bound = std::sqrt(1.0 / static_cast<double>(H));
  m.gru.hidden = H;
  std::size_t in = feature_width;
  for (std::size_t l = 0; l < spec.gru_layers; ++l) {
    std::array<GruDirection<T>, 2> layer;
    for (std::size_t d = 0; d < 2; ++d) {
      const std::string prefix = "gru.l" + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
      layer[d].w_ih = uniform_tensor<T>({3 * H, in}, bound, rng.substream(prefix + ".w_ih"));
      layer[d].w_hh = uniform_tensor<T>({3 * H, H}, bound, rng.substream(prefix + ".w_hh"));
      layer[d].b_ih = zero_param<T>({3 * H});
      layer[d].b_hh = zero_param<T>({3 * H});
    }
    m.gru.layers.push_back(std::move(layer));
    in = 2 * H;
  }
  return m;
}

}  // namespace

template <typename T>
NamedTensors<T> ModelAssembly<T>::trunk_parameters() const {
  NamedTensors<T> out;
  out.emplace_back("bn_in.gamma", input_norm.gamma);
  out.emplace_back("bn_in.beta", input_norm.beta);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    out.emplace_back("conv" + n + ".weight", convs[i].weight);
    out.emplace_back("conv" + n + ".bias", convs[i].bias);
    out.emplace_back("bn" + n + ".gamma", block_norms[i].gamma);
    out.emplace_back("bn" + n + ".beta", block_norms[i].beta);
  }
  for (std::size_t l = 0; l < gru.layers.size(); ++l) {
    for (std::size_t d = 0; d < 2; ++d) {
      const std::string prefix = "gru.l" + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
      const auto& p = gru.layers[l][d];
      out.emplace_back(prefix + ".w_ih", p.w_ih);
      out.emplace_back(prefix + ".w_hh", p.w_hh);
      out.emplace_back(prefix + ".b_ih", p.b_ih);
      out.emplace_back(prefix + ".b_hh", p.b_hh);
    }
  }
  return out;
}

template <typename T>
NamedTensors<T> ModelAssembly<T>::named_parameters() const {
  NamedTensors<T> out = trunk_parameters();
  for (const auto& h : heads) {
    out.emplace_back("head." + h.name + ".weight", h.weight);
    out.emplace_back("head." + h.name + ".bias", h.bias);
  }
  return out;
}

template <typename T>
NamedTensors<T> ModelAssembly<T>::named_buffers() const {
  NamedTensors<T> out;
  out.emplace_back("bn_in.running_mean", input_norm.running_mean);
  out.emplace_back("bn_in.running_var", input_norm.running_var);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    out.emplace_back("bn" + n + ".running_mean", block_norms[i].running_mean);
    out.emplace_back("bn" + n + ".running_var", block_norms[i].running_var);
  }
  return out;
}

template <typename T>
bool ModelAssembly<T>::has_head(std::string_view name) const {
  for (const auto& h : heads)
    if (h.name == name) return true;
  return false;
}

template <typename T>
const Head<T>& ModelAssembly<T>::head(std::string_view name) const {
  for (const auto& h : heads)
    if (h.name == name) return h;
  throw std::out_of_range("model has no head '" + std::string(name) + "'");
}

template <typename T>
Head<T>& ModelAssembly<T>::head(std::string_view name) {
  return const_cast<Head<T>&>(std::as_const(*this).head(name));
}

template <typename T>
std::vector<std::string> ModelAssembly<T>::head_names() const {
  std::vector<std::string> names;
  for (const auto& h : heads) names.push_back(h.name);
  return names;
}

template <typename T>
void ModelAssembly<T>::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

template <typename T>
ModelAssembly<T> build_baseline(const BaselineSpec& spec, const Rng& rng) {
  auto m = build_trunk<T>(spec, rng);
  m.kind = ModelKind::baseline;
  m.heads.push_back(make_head<T>("class", spec.num_classes, spec.summary_width(), false, rng));
  return m;
}

template <typename T>
ModelAssembly<T> build_dann(const BaselineSpec& spec, const Rng& rng) {
  auto m = build_trunk<T>(spec, rng);
  m.kind = ModelKind::dann;
  m.heads.push_back(make_head<T>("class", spec.num_classes, spec.summary_width(), false, rng));
  m.heads.push_back(make_head<T>("domain", 2, spec.summary_width(), true, rng));
  return m;
}

template <typename T>
ModelAssembly<T> build_mtl(const BaselineSpec& spec, const std::vector<std::string>& tasks, const Rng& rng) {
  if (tasks.empty()) throw std::invalid_argument("build_mtl: no tasks");
  auto m = build_trunk<T>(spec, rng);
  m.kind = ModelKind::mtl;
  for (const auto& t : tasks) {
    if (m.has_head(t)) throw std::invalid_argument("build_mtl: duplicate task '" + t + "'");
    m.heads.push_back(make_head<T>(t, spec.num_classes, spec.summary_width(), false, rng));
  }
  return m;
}

template <typename T>
TrunkOutput<T> forward_trunk(ModelAssembly<T>& m, const Tensor<T>& batch, RunMode mode) {
  const auto& spec = m.spec;
  if (batch.rank() != 5 || batch.shape() != spec.input_shape(batch.dim(0)))
    throw ShapeError("forward: expected input " + shape_str(spec.input_shape(batch.rank() ? batch.dim(0) : 1)) +
                     ", got " + shape_str(batch.shape()));
  const bool training = mode == RunMode::train;
  Tensor<T> x = batchnorm(batch, m.input_norm, training);
  for (std::size_t i = 0; i < 3; ++i) {
    x = conv3d(x, m.convs[i]);
    x = maxpool3d(x, spec.pool_kernel, spec.pool_stride, spec.pool_padding);
    x = batchnorm(x, m.block_norms[i], training);
  }
  const std::size_t b = x.dim(0), c = x.dim(1), t = x.dim(2), h = x.dim(3), w = x.dim(4);
  TrunkOutput<T> out;
  out.sequence = reshape(permute(x, {0, 2, 1, 3, 4}), {b, t, c * h * w});
  auto gru = gru_bidirectional(out.sequence, m.gru);
  const auto& top = gru.finals.back();
  out.summary = concat<T>({top[0], top[1]}, 1);
  return out;
}

template <typename T>
Tensor<T> forward_head(const ModelAssembly<T>& m, const Tensor<T>& summary, std::string_view name, T lambda) {
  const auto& h = m.head(name);
  if (h.reversed) return linear(gradient_reversal(summary, lambda), h.weight, h.bias);
  return linear(summary, h.weight, h.bias);
}

template <typename T>
Tensor<T> forward_baseline(ModelAssembly<T>& m, const Tensor<T>& batch, RunMode mode) {
  auto trunk = forward_trunk(m, batch, mode);
  return forward_head(m, trunk.summary, "class");
}

template <typename T>
DannLogits<T> forward_dann(ModelAssembly<T>& m, const Tensor<T>& batch, T lambda, RunMode mode) {
  if (m.kind != ModelKind::dann) throw std::invalid_argument("forward_dann: model kind is " + to_string(m.kind));
  auto trunk = forward_trunk(m, batch, mode);
  return {forward_head(m, trunk.summary, "class"), forward_head(m, trunk.summary, "domain", lambda)};
}

template <typename T>
Tensor<T> forward_mtl(ModelAssembly<T>& m, const Tensor<T>& batch, std::string_view task, RunMode mode) {
  if (m.kind != ModelKind::mtl) throw std::invalid_argument("forward_mtl: model kind is " + to_string(m.kind));
  if (!m.has_head(task)) throw std::out_of_range("forward_mtl: unknown task '" + std::string(task) + "'");
  auto trunk = forward_trunk(m, batch, mode);
  return forward_head(m, trunk.summary, task);
}

template <typename T>
void reinit_head(ModelAssembly<T>& m, const Rng& rng, std::size_t num_classes) {
  if (m.kind != ModelKind::baseline) throw std::invalid_argument("reinit_head: model kind is " + to_string(m.kind));
  auto& h = m.head("class");
  const std::size_t width = num_classes ? num_classes : h.width;
  h = make_head<T>("class", width, m.spec.summary_width(), false, rng);
  m.spec.num_classes = width;
}

template <typename T>
std::uint64_t checksum(const NamedTensors<T>& tensors) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& [name, t] : tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
    for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

#define MOUTHNET_MODELS_INSTANTIATE(T)                                                                      \
  template class ModelAssembly<T>;                                                                          \
  template ModelAssembly<T> build_baseline(const BaselineSpec&, const Rng&);                                \
  template ModelAssembly<T> build_dann(const BaselineSpec&, const Rng&);                                    \
  template ModelAssembly<T> build_mtl(const BaselineSpec&, const std::vector<std::string>&, const Rng&);    \
  template TrunkOutput<T> forward_trunk(ModelAssembly<T>&, const Tensor<T>&, RunMode);                      \
  template Tensor<T> forward_head(const ModelAssembly<T>&, const Tensor<T>&, std::string_view, T);          \
  template Tensor<T> forward_baseline(ModelAssembly<T>&, const Tensor<T>&, RunMode);                        \
  template DannLogits<T> forward_dann(ModelAssembly<T>&, const Tensor<T>&, T, RunMode);                     \
  template Tensor<T> forward_mtl(ModelAssembly<T>&, const Tensor<T>&, std::string_view, RunMode);           \
  template void reinit_head(ModelAssembly<T>&, const Rng&, std::size_t);                                    \
  template std::uint64_t checksum(const NamedTensors<T>&);

MOUTHNET_MODELS_INSTANTIATE(float)
MOUTHNET_MODELS_INSTANTIATE(double)

}  // namespace mouthnet

#include "mouthnet/optim.hpp"

#include <cmath>

namespace mouthnet {

namespace {

Tensor<float>& moment_for(NamedTensors<float>& store, const std::string& name, const Shape& shape) {
  for (auto& [n, t] : store) {
    if (n != name) continue;
    if (t.shape() != shape)
      throw ShapeError("adam: moment '" + name + "' is " + shape_str(t.shape()) + ", parameter is " +
                       shape_str(shape));
    return t;
  }
  store.emplace_back(name, Tensor<float>::zeros(shape));
  return store.back().second;
}

}  // namespace

void adam_step(const NamedTensors<float>& params, AdamState& state, const AdamHyper& hyper) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& [name, param] : params) {
    if (!param.has_grad()) continue;
    if (param.grad().size() != param.numel())
      throw ShapeError("adam: gradient of '" + name + "' has " + std::to_string(param.grad().size()) +
                       " elements, parameter has " + std::to_string(param.numel()));
    auto m = moment_for(state.m, name, param.shape()).mutable_data();
    auto v = moment_for(state.v, name, param.shape()).mutable_data();
    auto p = Tensor<float>(param).mutable_data();
    const auto g = param.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p[i] = static_cast<float>(p[i] - hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

}  // namespace mouthnet

#pragma once

#include <cstdint>

#include "mouthnet/models.hpp"

namespace mouthnet {

struct AdamHyper {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are keyed by parameter name and created as zeros on first use.
struct AdamState {
  std::uint64_t step = 0;
  NamedTensors<float> m;
  NamedTensors<float> v;
};

// One bias-corrected Adam update of every parameter that holds a gradient;
// parameters without a gradient are left alone. The step counter advances
// once per call. Throws ShapeError when a stored moment or gradient does not
// match its parameter.
void adam_step(const NamedTensors<float>& params, AdamState& state, const AdamHyper& hyper);

}  // namespace mouthnet

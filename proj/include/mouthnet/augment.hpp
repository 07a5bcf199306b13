#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mouthnet/datapipe.hpp"
#include "mouthnet/rng.hpp"

namespace mouthnet {

// RandAugment menu. Equalisation and additive noise are deliberately absent:
// they are reserved for the perturbed test set.
enum class AugOp {
  identity,
  rotate,
  shear_x,
  shear_y,
  translate_x,
  translate_y,
  brightness,
  contrast,
  sharpness,
  posterize,
  solarize,
};

std::string to_string(AugOp op);
// Throws std::invalid_argument for unknown names and for the reserved
// perturbations ("equalize", "gaussian_noise").
AugOp parse_aug_op(std::string_view name);

inline constexpr int kMaxMagnitude = 30;

struct AugPolicy {
  std::size_t num_ops = 2;
  int magnitude = 9;  // 0..30
  std::vector<AugOp> op_set;

  static std::vector<AugOp> default_ops();
  // Validates ranges; op names go through parse_aug_op.
  static AugPolicy create(std::size_t num_ops, int magnitude, const std::vector<std::string>& op_names = {});
};

// One sampled transform. `value` is the signed, magnitude-scaled parameter:
// degrees for rotate, shear factor, pixels for translate, enhancement factor
// for brightness/contrast/sharpness, bit depth for posterize, threshold for
// solarize.
struct AugDraw {
  AugOp op = AugOp::identity;
  double value = 0.0;
};

AugDraw make_draw(AugOp op, int magnitude, bool negate);
std::vector<AugDraw> sample_ops(const AugPolicy& policy, Rng& rng);

// Applies one transform identically to every frame.
Clip apply_op(const Clip& clip, const AugDraw& draw);

Clip randaugment_clip(const Clip& clip, const AugPolicy& policy, Rng& rng);

// Adds per-pixel N(0, sigma^2), rounds and clamps to [0, 255].
Clip gaussian_noise(const Clip& clip, double sigma, Rng& rng);

// Per-frame classical equalisation:
// out = round(255 * (cdf(v) - cdf_min) / (N - cdf_min)).
Clip hist_equalize(const Clip& clip);

// Noise then equalisation on every clip; each clip draws from a substream
// keyed by its clip_id so the result is independent of processing order.
std::vector<Clip> build_perturbed_testset(const std::vector<Clip>& test_clips, double sigma, std::uint64_t seed);

}  // namespace mouthnet

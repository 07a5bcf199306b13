#include "mouthnet/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mouthnet {

namespace {

struct OpName {
  AugOp op;
  const char* name;
};

constexpr std::array<OpName, 11> kOpNames{{
    {AugOp::identity, "identity"},
    {AugOp::rotate, "rotate"},
    {AugOp::shear_x, "shear_x"},
    {AugOp::shear_y, "shear_y"},
    {AugOp::translate_x, "translate_x"},
    {AugOp::translate_y, "translate_y"},
    {AugOp::brightness, "brightness"},
    {AugOp::contrast, "contrast"},
    {AugOp::sharpness, "sharpness"},
    {AugOp::posterize, "posterize"},
    {AugOp::solarize, "solarize"},
}};

constexpr double kMaxRotateDeg = 30.0;
constexpr double kMaxShear = 0.3;
constexpr double kMaxTranslatePx = 10.0;
constexpr double kMaxEnhance = 0.9;

std::uint8_t to_pixel(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Inverse-mapped affine warp about the frame centre: source = A * (p - c) + c + offset.
Clip warp(const Clip& clip, const std::array<double, 4>& a, double off_x, double off_y) {
  Clip out = clip;
  const double cx = (static_cast<double>(clip.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(clip.height) - 1.0) / 2.0;
  const long W = static_cast<long>(clip.width), H = static_cast<long>(clip.height);
  for (std::size_t t = 0; t < clip.frames; ++t) {
    const auto src = clip.frame(t);
    auto dst = out.frame(t);
    auto sample = [&](long x, long y) -> double {
      if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
      return src[static_cast<std::size_t>(y * W + x)];
    };
    for (long y = 0; y < H; ++y) {
      for (long x = 0; x < W; ++x) {
        const double px = static_cast<double>(x) - cx, py = static_cast<double>(y) - cy;
        const double sx = a[0] * px + a[1] * py + cx + off_x;
        const double sy = a[2] * px + a[3] * py + cy + off_y;
        const double fx = std::floor(sx), fy = std::floor(sy);
        const double wx = sx - fx, wy = sy - fy;
        const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
        const double v = (1 - wy) * ((1 - wx) * sample(x0, y0) + wx * sample(x0 + 1, y0)) +
                         wy * ((1 - wx) * sample(x0, y0 + 1) + wx * sample(x0 + 1, y0 + 1));
        dst[static_cast<std::size_t>(y * W + x)] = to_pixel(v);
      }
    }
  }
  return out;
}

// degenerate + factor * (img - degenerate), per pixel.
template <typename Degenerate>
Clip blend(const Clip& clip, double factor, Degenerate&& degenerate) {
  Clip out = clip;
  for (std::size_t i = 0; i < clip.pixels.size(); ++i) {
    const double d = degenerate(i);
    out.pixels[i] = to_pixel(d + factor * (static_cast<double>(clip.pixels[i]) - d));
  }
  return out;
}

// 3x3 smoothing kernel [1 1 1; 1 5 1; 1 1 1] / 13; border pixels keep their value.
std::vector<double> smoothed(const Clip& clip) {
  std::vector<double> s(clip.pixels.begin(), clip.pixels.end());
  const std::size_t H = clip.height, W = clip.width;
  if (H < 3 || W < 3) return s;
  for (std::size_t t = 0; t < clip.frames; ++t) {
    const auto f = clip.frame(t);
    for (std::size_t y = 1; y + 1 < H; ++y)
      for (std::size_t x = 1; x + 1 < W; ++x) {
        double acc = 4.0 * f[y * W + x];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += f[(y + dy) * W + (x + dx)];
        s[t * H * W + y * W + x] = acc / 13.0;
      }
  }
  return s;
}

}  // namespace

std::string to_string(AugOp op) {
  for (const auto& n : kOpNames)
    if (n.op == op) return n.name;
  return "?";
}

AugOp parse_aug_op(std::string_view name) {
  if (name == "equalize" || name == "gaussian_noise" || name == "histogram_equalization")
    throw std::invalid_argument("augmentation op '" + std::string(name) +
                                "' is reserved for the perturbed test set");
  for (const auto& n : kOpNames)
    if (name == n.name) return n.op;
  throw std::invalid_argument("unknown augmentation op '" + std::string(name) + "'");
}

std::vector<AugOp> AugPolicy::default_ops() {
  std::vector<AugOp> ops;
  for (const auto& n : kOpNames) ops.push_back(n.op);
  return ops;
}

AugPolicy AugPolicy::create(std::size_t num_ops, int magnitude, const std::vector<std::string>& op_names) {
  if (magnitude < 0 || magnitude > kMaxMagnitude)
    throw std::invalid_argument("augmentation magnitude must be in [0, 30], got " + std::to_string(magnitude));
  AugPolicy p;
  p.num_ops = num_ops;
  p.magnitude = magnitude;
  if (op_names.empty()) {
    p.op_set = default_ops();
  } else {
    for (const auto& n : op_names) p.op_set.push_back(parse_aug_op(n));
  }
  return p;
}

AugDraw make_draw(AugOp op, int magnitude, bool negate) {
  const double level = static_cast<double>(magnitude) / kMaxMagnitude;
  const double sign = negate ? -1.0 : 1.0;
  AugDraw d{op, 0.0};
  switch (op) {
    case AugOp::identity:
      break;
    case AugOp::rotate:
      d.value = sign * kMaxRotateDeg * level;
      break;
    case AugOp::shear_x:
    case AugOp::shear_y:
      d.value = sign * kMaxShear * level;
      break;
    case AugOp::translate_x:
    case AugOp::translate_y:
      d.value = sign * kMaxTranslatePx * level;
      break;
    case AugOp::brightness:
    case AugOp::contrast:
    case AugOp::sharpness:
      d.value = 1.0 + sign * kMaxEnhance * level;
      break;
    case AugOp::posterize:
      d.value = 8.0 - std::floor(4.0 * level);
      break;
    case AugOp::solarize:
      d.value = 256.0 * (1.0 - level);
      break;
  }
  return d;
}

std::vector<AugDraw> sample_ops(const AugPolicy& policy, Rng& rng) {
  std::vector<AugDraw> draws;
  if (policy.op_set.empty()) return draws;
  for (std::size_t i = 0; i < policy.num_ops; ++i) {
    const AugOp op = policy.op_set[rng.below(policy.op_set.size())];
    const bool negate = rng.below(2) == 1;
    draws.push_back(make_draw(op, policy.magnitude, negate));
  }
  return draws;
}

Clip apply_op(const Clip& clip, const AugDraw& d) {
  switch (d.op) {
    case AugOp::identity:
      return clip;
    case AugOp::rotate: {
      // inverse rotation maps output pixels back into the source
      const double th = d.value * std::numbers::pi / 180.0;
      const double c = std::cos(th), s = std::sin(th);
      return warp(clip, {c, s, -s, c}, 0.0, 0.0);
    }
    case AugOp::shear_x:
      return warp(clip, {1.0, d.value, 0.0, 1.0}, 0.0, 0.0);
    case AugOp::shear_y:
      return warp(clip, {1.0, 0.0, d.value, 1.0}, 0.0, 0.0);
    case AugOp::translate_x:
      return warp(clip, {1.0, 0.0, 0.0, 1.0}, -d.value, 0.0);
    case AugOp::translate_y:
      return warp(clip, {1.0, 0.0, 0.0, 1.0}, 0.0, -d.value);
    case AugOp::brightness:
      return blend(clip, d.value, [](std::size_t) { return 0.0; });
    case AugOp::contrast: {
      double mean = 0;
      for (auto v : clip.pixels) mean += v;
      mean /= static_cast<double>(clip.pixels.size());
      return blend(clip, d.value, [mean](std::size_t) { return mean; });
    }
    case AugOp::sharpness: {
      const auto s = smoothed(clip);
      return blend(clip, d.value, [&s](std::size_t i) { return s[i]; });
    }
    case AugOp::posterize: {
      const int bits = std::clamp(static_cast<int>(d.value), 1, 8);
      const auto mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
      Clip out = clip;
      for (auto& v : out.pixels) v &= mask;
      return out;
    }
    case AugOp::solarize: {
      Clip out = clip;
      for (auto& v : out.pixels)
        if (static_cast<double>(v) >= d.value) v = static_cast<std::uint8_t>(255 - v);
      return out;
    }
  }
  return clip;
}

Clip randaugment_clip(const Clip& clip, const AugPolicy& policy, Rng& rng) {
  Clip out = clip;
  for (const auto& d : sample_ops(policy, rng)) out = apply_op(out, d);
  return out;
}

Clip gaussian_noise(const Clip& clip, double sigma, Rng& rng) {
  if (sigma < 0) throw std::invalid_argument("gaussian_noise: sigma must be non-negative");
  Clip out = clip;
  if (sigma == 0) return out;
  for (auto& v : out.pixels) v = to_pixel(static_cast<double>(v) + sigma * rng.normal());
  return out;
}

Clip hist_equalize(const Clip& clip) {
  Clip out = clip;
  const std::size_t n = clip.frame_size();
  for (std::size_t t = 0; t < clip.frames; ++t) {
    auto f = out.frame(t);
    std::array<std::size_t, 256> cdf{};
    for (auto v : f) ++cdf[v];
    std::size_t cdf_min = 0;
    for (std::size_t v = 0, acc = 0; v < 256; ++v) {
      acc += cdf[v];
      if (cdf_min == 0 && acc > 0) cdf_min = acc;
      cdf[v] = acc;
    }
    if (n == cdf_min) continue;  // single-valued frame
    std::array<std::uint8_t, 256> lut{};
    for (std::size_t v = 0; v < 256; ++v) {
      const double num = cdf[v] >= cdf_min ? static_cast<double>(cdf[v] - cdf_min) : 0.0;
      lut[v] = to_pixel(255.0 * num / static_cast<double>(n - cdf_min));
    }
    for (auto& v : f) v = lut[v];
  }
  return out;
}

std::vector<Clip> build_perturbed_testset(const std::vector<Clip>& test_clips, double sigma, std::uint64_t seed) {
  const Rng root(seed);
  std::vector<Clip> out(test_clips.size());
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(test_clips.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto& c = test_clips[static_cast<std::size_t>(i)];
    Rng rng = root.substream("perturb/" + c.clip_id);
    Clip p = hist_equalize(gaussian_noise(c, sigma, rng));
    p.dataset = DatasetId::Mbar;
    out[static_cast<std::size_t>(i)] = std::move(p);
  }
  return out;
}

}  // namespace mouthnet

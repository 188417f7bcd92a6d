#include "fer/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fer/errors.hpp"
#include "fer/rng.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

AugmentPolicy AugmentPolicy::none() {
  AugmentPolicy p;
  p.flip_prob = 0.0;
  p.rotation_deg = 0.0;
  p.zoom_frac = 0.0;
  p.shift_frac = 0.0;
  return p;
}

void AugmentPolicy::validate() const {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ArgumentError("flip_prob must lie in [0, 1]");
  if (!(rotation_deg >= 0.0) || !(zoom_frac >= 0.0) || !(shift_frac >= 0.0)) {
    throw ArgumentError("augmentation magnitudes must be >= 0");
  }
  if (zoom_frac >= 1.0) throw ArgumentError("zoom_frac must be < 1");
}

AffineParams sample_affine(const AugmentPolicy& policy, std::size_t width, std::size_t height,
                           std::uint64_t seed) {
  Rng rng(seed);
  AffineParams p;
  p.flip = rng.bernoulli(policy.flip_prob);
  p.angle_deg = rng.uniform(-policy.rotation_deg, policy.rotation_deg);
  p.zoom = rng.uniform(1.0 - policy.zoom_frac, 1.0 + policy.zoom_frac);
  p.shift_x = rng.uniform(-policy.shift_frac, policy.shift_frac) * static_cast<double>(width);
  p.shift_y = rng.uniform(-policy.shift_frac, policy.shift_frac) * static_cast<double>(height);
  return p;
}

GrayImage apply_affine(const GrayImage& image, const AffineParams& params, FillMode fill,
                       double fill_value) {
  const GrayImage source = params.flip ? flip_horizontal(image) : image;
  if (params.angle_deg == 0.0 && params.zoom == 1.0 && params.shift_x == 0.0 &&
      params.shift_y == 0.0) {
    return source;
  }
  const auto w = static_cast<std::ptrdiff_t>(source.width);
  const auto h = static_cast<std::ptrdiff_t>(source.height);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double theta = params.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double inv_zoom = 1.0 / params.zoom;

  auto fetch = [&](std::ptrdiff_t x, std::ptrdiff_t y) -> double {
    if (fill == FillMode::kEdge) {
      x = std::clamp<std::ptrdiff_t>(x, 0, w - 1);
      y = std::clamp<std::ptrdiff_t>(y, 0, h - 1);
    } else if (x < 0 || x >= w || y < 0 || y >= h) {
      return fill_value;
    }
    return source.values[static_cast<std::size_t>(y * w + x)];
  };

  GrayImage out(source.width, source.height);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      // Inverse map: destination -> source.
      const double dx = (static_cast<double>(x) - cx - params.shift_x) * inv_zoom;
      const double dy = (static_cast<double>(y) - cy - params.shift_y) * inv_zoom;
      const double sx = cx + c * dx - s * dy;
      const double sy = cy + s * dx + c * dy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
      const double tx = sx - fx, ty = sy - fy;
      const double top = std::lerp(fetch(x0, y0), fetch(x0 + 1, y0), tx);
      const double bottom = std::lerp(fetch(x0, y0 + 1), fetch(x0 + 1, y0 + 1), tx);
      const double v = std::lerp(top, bottom, ty);
      out.values[static_cast<std::size_t>(y * w + x)] = static_cast<Scalar>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

GrayImage apply_policy(const GrayImage& image, const AugmentPolicy& policy, std::uint64_t seed) {
  const AffineParams params = sample_affine(policy, image.width, image.height, seed);
  return apply_affine(image, params, policy.fill, policy.fill_value);
}

Sample apply_policy(const Sample& sample, const AugmentPolicy& policy, std::uint64_t seed) {
  Sample out;
  out.image = apply_policy(sample.image, policy, seed);
  out.label = sample.label;
  out.source_id = sample.source_id;
  return out;
}

std::vector<GrayImage> tta_set(const GrayImage& image, const AugmentPolicy& policy,
                               std::uint64_t seed) {
  std::vector<GrayImage> out;
  out.reserve(kTtaSetSize);
  out.push_back(image);
  out.push_back(flip_horizontal(image));
  for (std::uint64_t k = 0; k + 2 < kTtaSetSize; ++k) {
    out.push_back(apply_policy(image, policy, derive_seed(seed, k)));
  }
  return out;
}

}  // namespace FER_PRECISION_NS
}  // namespace fer

#pragma once

#include <cstdint>
#include <vector>

#include "fer/data.hpp"
#include "fer/image.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

enum class FillMode { kEdge, kConstant };

struct AugmentPolicy {
  double flip_prob = 0.5;
  double rotation_deg = 10.0;  // angle ~ U(-rotation_deg, +rotation_deg)
  double zoom_frac = 0.10;     // scale ~ U(1 - zoom_frac, 1 + zoom_frac)
  double shift_frac = 0.10;    // per-axis offset ~ U(-shift_frac, +shift_frac) * extent
  FillMode fill = FillMode::kEdge;
  double fill_value = 0.0;     // used with FillMode::kConstant

  /// All magnitudes zero and no flipping.
  static AugmentPolicy none();
  void validate() const;
};

struct AffineParams {
  bool flip = false;
  double angle_deg = 0.0;  // counter-clockwise as displayed
  double zoom = 1.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
};

/// Draw order: flip, angle, zoom, shift_x, shift_y.
AffineParams sample_affine(const AugmentPolicy& policy, std::size_t width, std::size_t height,
                           std::uint64_t seed);

/// Optional exact flip, then one bilinear resampling of the composed
/// rotate-about-center, scale-about-center, translate transform.
GrayImage apply_affine(const GrayImage& image, const AffineParams& params,
                       FillMode fill = FillMode::kEdge, double fill_value = 0.0);

GrayImage apply_policy(const GrayImage& image, const AugmentPolicy& policy, std::uint64_t seed);
Sample apply_policy(const Sample& sample, const AugmentPolicy& policy, std::uint64_t seed);

inline constexpr std::size_t kTtaSetSize = 9;

/// {original, horizontal flip, 7 policy draws}.
std::vector<GrayImage> tta_set(const GrayImage& image, const AugmentPolicy& policy,
                               std::uint64_t seed);

}  // namespace FER_PRECISION_NS
}  // namespace fer

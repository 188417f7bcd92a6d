#pragma once

// Scalar precision. The default build trains and serves in 32-bit floats;
// defining FER_USE_DOUBLE builds the same sources in 64-bit for gradient
// checking. Each precision lives in its own inline namespace so that both
// variants can be linked into one binary.

#if defined(FER_USE_DOUBLE)
#define FER_PRECISION_NS f64
#else
#define FER_PRECISION_NS f32
#endif

namespace fer {
inline namespace FER_PRECISION_NS {

#if defined(FER_USE_DOUBLE)
using Scalar = double;
#else
using Scalar = float;
#endif

inline constexpr int kNumClasses = 7;
inline constexpr int kImageSide = 48;
inline constexpr int kImagePixels = kImageSide * kImageSide;

}  // namespace FER_PRECISION_NS
}  // namespace fer

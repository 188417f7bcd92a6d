#pragma once

// Parameter counts written out by hand from the layer tables, independent of
// the model-building code.

#include <cmath>
#include <cstddef>

namespace closed_form {

inline std::size_t five_layer_params() {
  const std::size_t conv1 = 5 * 5 * 1 * 32 + 32;      // 832
  const std::size_t conv2 = 4 * 4 * 32 * 32 + 32;     // 16,416
  const std::size_t conv3 = 5 * 5 * 32 * 64 + 64;     // 51,264
  const std::size_t fc = 6 * 6 * 64 * 1024 + 1024;    // 2,360,320
  const std::size_t head = 1024 * 7 + 7;              // 7,175
  const std::size_t bn = 2 * (32 + 32 + 64 + 1024);   // gamma + beta
  return conv1 + conv2 + conv3 + fc + head + bn;
}

inline std::size_t baseline_params() {
  const std::size_t conv = (3 * 3 * 1 * 32 + 32) + 3 * (3 * 3 * 32 * 32 + 32);
  const std::size_t bn = 4 * 2 * 32;
  const std::size_t fc = 12 * 12 * 32 * 8192 + 8192;
  const std::size_t head = 8192 * 7 + 7;
  return conv + bn + fc + head;
}

/// Millions, rounded to one decimal as in a parameter table.
inline double millions(std::size_t n) { return std::round(static_cast<double>(n) / 1e5) / 10; }

}  // namespace closed_form

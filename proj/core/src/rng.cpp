#include "fer/rng.hpp"

#include <cmath>
#include <numbers>

namespace fer {
inline namespace FER_PRECISION_NS {

double Rng::normal() {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace FER_PRECISION_NS
}  // namespace fer

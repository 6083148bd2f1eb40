// SPDX-License-Identifier: Apache-2.0
#include "vfa/bitflip.hpp"

#include <cmath>
#include <limits>

namespace vfa {

double exact_epsilon(float x, int bit) {
  const float flipped = flip_bit(x, bit);
  if (std::isnan(flipped)) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(flipped) - static_cast<double>(x);
}

double Pow2::value() const {
  switch (kind) {
    case Pow2Kind::Mask: return 0.0;
    case Pow2Kind::Cvv: return sign * std::ldexp(1.0, rho);
    case Pow2Kind::Overflow: return sign * std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

Pow2 approx_pow2(double eps, int rho_max) {
  if (std::isnan(eps)) return {Pow2Kind::Overflow, 1, 0};
  const int sign = std::signbit(eps) ? -1 : 1;
  if (std::isinf(eps)) return {Pow2Kind::Overflow, sign, 0};
  if (eps == 0.0) return {Pow2Kind::Mask, 1, 0};

  // |eps| = m * 2^e with m in [0.5, 1); log2|eps| rounds to e when
  // m >= 2^-0.5, i.e. m*m - 0.5 >= 0, decided exactly by a single rounding.
  int e = 0;
  const double m = std::frexp(std::fabs(eps), &e);
  const int rho = std::fma(m, m, -0.5) >= 0.0 ? e : e - 1;
  if (rho < -rho_max) return {Pow2Kind::Mask, 1, 0};
  if (rho > rho_max) return {Pow2Kind::Overflow, sign, 0};
  return {Pow2Kind::Cvv, sign, rho};
}

}  // namespace vfa

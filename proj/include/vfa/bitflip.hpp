// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace vfa {

// IEEE-754 binary32: bit 31 sign, bits 30..23 exponent, bits 22..0 mantissa.
inline constexpr int kSignBit = 31;
inline constexpr int kExponentLow = 23;
inline constexpr int kBitsPerValue = 32;

/// `x` with exactly bit `bit` of its encoding toggled.
inline float flip_bit(float x, int bit) {
  return std::bit_cast<float>(std::bit_cast<std::uint32_t>(x) ^ (std::uint32_t{1} << bit));
}

/// Error introduced by flipping `bit` of a finite `x`: flip_bit(x, bit) - x,
/// evaluated in double. A flip that lands on a NaN encoding yields NaN, which
/// the binning treats as positive overflow.
double exact_epsilon(float x, int bit);

enum class Pow2Kind { Mask, Cvv, Overflow };

/// A value snapped to the signed power-of-two grid.
struct Pow2 {
  Pow2Kind kind = Pow2Kind::Mask;
  int sign = 1;  // +1 / -1 (Mask keeps +1)
  int rho = 0;   // exponent, meaningful for Cvv

  double value() const;
  bool operator==(const Pow2&) const = default;
};

/// Nearest signed power of two in the log2 domain. Magnitudes whose nearest
/// power is below 2^-rho_max are masked; above 2^rho_max, infinite or NaN are
/// overflow (NaN counts as positive).
Pow2 approx_pow2(double eps, int rho_max = 10);

}  // namespace vfa

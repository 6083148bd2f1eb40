// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "vfa/bitflip.hpp"

using namespace vfa;

TEST_CASE("flip_bit examples") {
  CHECK(flip_bit(1.0f, 31) == -1.0f);
  CHECK(flip_bit(1.0f, 23) == 0.5f);
  CHECK(flip_bit(1.0f, 22) == 1.5f);
}

TEST_CASE("exact_epsilon examples") {
  CHECK(exact_epsilon(1.0f, 31) == -2.0);
  CHECK(exact_epsilon(1.0f, 22) == 0.5);
  for (int i = 0; i < 32; ++i) {
    const float flipped = oracle::toggle(3.7f, i);
    if (std::isnan(flipped))
      CHECK(std::isnan(exact_epsilon(3.7f, i)));
    else
      CHECK(exact_epsilon(3.7f, i) == static_cast<double>(flipped) - 3.7f);
  }
  // 1.5 has exponent 127 and a set mantissa MSB; bit 30 lands on an all-ones exponent.
  CHECK(std::isnan(exact_epsilon(1.5f, 30)));
  CHECK(std::isinf(exact_epsilon(1.0f, 30)));
}

TEST_CASE("double flip restores the encoding") {
  std::mt19937 rng(1);
  std::uniform_int_distribution<std::uint32_t> u;
  for (int n = 0; n < 2000; ++n) {
    float x = std::bit_cast<float>(u(rng));
    if (!std::isfinite(x)) continue;
    for (int i = 0; i < 32; ++i)
      CHECK(std::bit_cast<std::uint32_t>(flip_bit(flip_bit(x, i), i)) ==
            std::bit_cast<std::uint32_t>(x));
  }
}

TEST_CASE("error sign and magnitude per bit class") {
  // Positive normal x: mantissa bit i changes the value by 2^(E-127) * 2^(i-23).
  const float x = 5.25f;  // E = 129
  for (int i = 0; i < 23; ++i)
    CHECK(std::abs(exact_epsilon(x, i)) == std::ldexp(1.0, 129 - 127 + i - 23));
  CHECK(exact_epsilon(x, 31) == -2.0 * x);
  CHECK(exact_epsilon(-x, 31) == 2.0 * x);
  // 0 -> 1 raises the magnitude, 1 -> 0 lowers it.
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
  for (int i = 0; i < 31; ++i) {
    const double e = exact_epsilon(x, i);
    if (std::isnan(e)) continue;
    CHECK(((bits >> i) & 1u ? e < 0 : e > 0));
    const double en = exact_epsilon(-x, i);
    CHECK(((bits >> i) & 1u ? en > 0 : en < 0));
  }
}

TEST_CASE("approx_pow2 examples") {
  CHECK(approx_pow2(-0.5) == Pow2{Pow2Kind::Cvv, -1, -1});
  CHECK(approx_pow2(3.0) == Pow2{Pow2Kind::Cvv, 1, 2});
  CHECK(approx_pow2(std::ldexp(1.0, -12)).kind == Pow2Kind::Mask);
  CHECK(approx_pow2(0.0).kind == Pow2Kind::Mask);
  CHECK(approx_pow2(2048.0) == Pow2{Pow2Kind::Overflow, 1, 0});
  CHECK(approx_pow2(-INFINITY) == Pow2{Pow2Kind::Overflow, -1, 0});
  CHECK(approx_pow2(NAN) == Pow2{Pow2Kind::Overflow, 1, 0});
  CHECK(approx_pow2(1024.0) == Pow2{Pow2Kind::Cvv, 1, 10});
  CHECK(approx_pow2(std::ldexp(1.0, -10)) == Pow2{Pow2Kind::Cvv, 1, -10});
  // Boundaries sit at odd half-powers of two, which no double hits exactly.
  const double edge = std::sqrt(2.0);  // rounded; the true edge lies just above
  CHECK(approx_pow2(std::nextafter(edge, 0.0)).rho == 0);
  CHECK(approx_pow2(std::nextafter(edge, 4.0)).rho == 1);
  CHECK(approx_pow2(1.5).rho == 1);
  CHECK(approx_pow2(1.4).rho == 0);
  CHECK(approx_pow2(2.9).rho == 2);
  CHECK(approx_pow2(2.8).rho == 1);
}

TEST_CASE("approx_pow2 stays within half an octave") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> e(-10.4, 10.4), m(1.0, 2.0);
  for (int n = 0; n < 20000; ++n) {
    const double v = (n % 2 ? -1 : 1) * m(rng) * std::exp2(std::floor(e(rng)));
    const Pow2 p = approx_pow2(v);
    if (p.kind != Pow2Kind::Cvv) continue;
    const double r = p.value() / v;
    CHECK(r >= std::sqrt(0.5));
    CHECK(r <= std::sqrt(2.0));
  }
}

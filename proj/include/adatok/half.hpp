#pragma once

// IEEE-754 binary16 conversion. Narrowing rounds to nearest, ties to even.

#include <bit>
#include <cmath>
#include <cstdint>

namespace adatok {

inline std::uint16_t float_to_half(float value) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t exp = (bits >> 23) & 0xffu;
  const std::uint32_t mant = bits & 0x7fffffu;

  if (exp == 0xffu) {
    if (mant != 0) return static_cast<std::uint16_t>(sign | 0x7e00u | (mant >> 13));
    return static_cast<std::uint16_t>(sign | 0x7c00u);
  }
  if (exp == 0) return sign;  // float subnormals are far below half range

  const int e = static_cast<int>(exp) - 127;
  if (e > 15) return static_cast<std::uint16_t>(sign | 0x7c00u);

  if (e >= -14) {
    std::uint32_t half_exp = static_cast<std::uint32_t>(e + 15);
    std::uint32_t half_mant = mant >> 13;
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half_mant & 1u))) ++half_mant;
    if (half_mant == 0x400u) {
      half_mant = 0;
      ++half_exp;
    }
    if (half_exp >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
    return static_cast<std::uint16_t>(sign | (half_exp << 10) | half_mant);
  }

  // Half subnormal: unit is 2^-24, value is full_mant * 2^(e-23).
  const int shift = -e - 1;
  if (shift > 24) return sign;
  const std::uint32_t full_mant = mant | 0x800000u;
  std::uint32_t half_mant = full_mant >> shift;
  const std::uint32_t rem = full_mant & ((1u << shift) - 1u);
  const std::uint32_t halfway = 1u << (shift - 1);
  if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
  // A carry into bit 10 yields the smallest normal, which is the right encoding.
  return static_cast<std::uint16_t>(sign | half_mant);
}

inline float half_to_float(std::uint16_t half) {
  const std::uint32_t sign = static_cast<std::uint32_t>(half & 0x8000u) << 16;
  const std::uint32_t exp = (half >> 10) & 0x1fu;
  const std::uint32_t mant = half & 0x3ffu;

  if (exp == 0) {
    const float magnitude = std::ldexp(static_cast<float>(mant), -24);
    return sign ? -magnitude : magnitude;
  }
  if (exp == 31) {
    return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  }
  return std::bit_cast<float>(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

inline bool half_is_finite(std::uint16_t half) { return (half & 0x7c00u) != 0x7c00u; }

}  // namespace adatok

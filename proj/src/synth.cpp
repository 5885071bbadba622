// SPDX-License-Identifier: Apache-2.0
#include "beeplan/synth.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

namespace beeplan {

std::uint16_t fp16_from_float(float value) {
  std::uint32_t x;
  std::memcpy(&x, &value, 4);
  std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t exp_field = (x >> 23) & 0xFFu;
  std::uint32_t mant = x & 0x7FFFFFu;

  if (exp_field == 0xFFu) return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0));

  int exp = static_cast<int>(exp_field) - 127 + 15;
  if (exp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00u); // overflow to inf
  if (exp <= 0) {
    if (exp < -10) return static_cast<std::uint16_t>(sign); // underflow to zero
    mant |= 0x800000u;
    std::uint32_t shift = static_cast<std::uint32_t>(14 - exp);
    std::uint32_t half = mant >> shift;
    std::uint32_t rem = mant & ((1u << shift) - 1u);
    std::uint32_t halfway = 1u << (shift - 1u);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
  std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(sign | half);
}

float float_from_fp16(std::uint16_t bits) {
  std::uint32_t sign = (static_cast<std::uint32_t>(bits) & 0x8000u) << 16;
  std::uint32_t exp = (bits >> 10) & 0x1Fu;
  std::uint32_t mant = bits & 0x3FFu;
  std::uint32_t out;
  if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {
      // subnormal: normalize
      int shift = 0;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        ++shift;
      }
      mant &= 0x3FFu;
      out = sign | ((127 - 15 - shift) << 23) | (mant << 13);
    }
  } else if (exp == 0x1F) {
    out = sign | 0x7F800000u | (mant << 13);
  } else {
    out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &out, 4);
  return f;
}

Bytes synth_gaussian_fp16(std::size_t elements, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&] {
    // (0, 1], never exactly zero so the log below is safe.
    return (static_cast<double>(rng() >> 11) + 1.0) / 9007199254740993.0;
  };
  Bytes out;
  out.reserve(elements * 2);
  double spare = 0.0;
  bool have_spare = false;
  for (std::size_t i = 0; i < elements; ++i) {
    double z;
    if (have_spare) {
      z = spare;
      have_spare = false;
    } else {
      double u1 = uniform();
      double u2 = uniform();
      double r = std::sqrt(-2.0 * std::log(u1));
      z = r * std::cos(2.0 * std::numbers::pi * u2);
      spare = r * std::sin(2.0 * std::numbers::pi * u2);
      have_spare = true;
    }
    std::uint16_t bits = fp16_from_float(static_cast<float>(z));
    out.push_back(static_cast<std::uint8_t>(bits & 0xFFu));
    out.push_back(static_cast<std::uint8_t>(bits >> 8));
  }
  return out;
}

} // namespace beeplan

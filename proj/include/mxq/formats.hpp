// SPDX-License-Identifier: Apache-2.0
//
// Scalar codecs for the element and scale formats used by the 4-bit
// microscaling schemes:
//
//   E2M1  4-bit element, grid {0, 0.5, 1, 1.5, 2, 3, 4, 6}
//   E8M0  8-bit power-of-two scale, bias 127, code 255 reserved
//   E4M3  8-bit float scale (OCP "FN" flavour, max 448, no infinities)
//   FP16  used for the macro-block reciprocal scale and LUT storage
//
// plus the 8-bit mantissa extraction that backs macro block scaling.

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "mxq/error.hpp"

namespace mxq {

inline constexpr double kFp4Max = 6.0;
inline constexpr std::array<double, 8> kE2m1Grid = {0.0, 0.5, 1.0, 1.5,
                                                    2.0, 3.0, 4.0, 6.0};

// ---------------------------------------------------------------------------
// E2M1

/// Bit 3 is the sign, bits 2..0 index kE2m1Grid.
struct Fp4Code {
  std::uint8_t bits = 0;

  static constexpr Fp4Code make(bool negative, unsigned index) {
    return Fp4Code{static_cast<std::uint8_t>((negative ? 0x8u : 0u) | (index & 0x7u))};
  }
  constexpr bool negative() const { return (bits & 0x8u) != 0; }
  constexpr unsigned index() const { return bits & 0x7u; }

  friend constexpr bool operator==(Fp4Code, Fp4Code) = default;
};

/// Nearest grid magnitude index for a non-negative value, ties to the even
/// index. Values past 6 map to index 7.
constexpr unsigned e2m1_nearest_index(double mag) {
  unsigned best = 0;
  for (unsigned i = 1; i < kE2m1Grid.size(); ++i) {
    const double mid = 0.5 * (kE2m1Grid[i - 1] + kE2m1Grid[i]);
    if (mag > mid) {
      best = i;
    } else {
      if (mag == mid && (i % 2 == 0)) best = i;
      break;
    }
  }
  return best;
}

inline Fp4Code encode_e2m1(double v, bool saturate) {
  require(std::isfinite(v), "encode_e2m1: non-finite input");
  const double mag = std::fabs(v);
  if (mag > kFp4Max && !saturate)
    fail("encode_e2m1: |v| = " + std::to_string(mag) + " exceeds 6.0 without saturation");
  const unsigned idx = e2m1_nearest_index(mag);
  // Zero has a single encoding.
  if (idx == 0) return Fp4Code{};
  return Fp4Code::make(std::signbit(v), idx);
}

constexpr double decode_e2m1(Fp4Code c) {
  const double m = kE2m1Grid[c.index()];
  return c.negative() ? -m : m;
}

/// Twice the decoded value; always an integer in [-12, 12].
constexpr int decode_e2m1_x2(Fp4Code c) {
  constexpr std::array<int, 8> twice = {0, 1, 2, 3, 4, 6, 8, 12};
  const int m = twice[c.index()];
  return c.negative() ? -m : m;
}

// ---------------------------------------------------------------------------
// Generic minifloat rounding

/// Rounds |x| to nearest-even on a binary float grid with `precision`
/// significand bits (implicit bit included) whose smallest normal exponent is
/// `min_exp`; below that the grid is uniform (subnormals). No overflow
/// handling; callers clamp.
inline double round_minifloat(double x, int precision, int min_exp) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  int e = std::ilogb(x);
  if (e < min_exp) e = min_exp;
  const int quantum_exp = e - (precision - 1);
  // Scaling by a power of two is exact; nearbyint honours the default
  // round-to-nearest-even mode.
  const double q = std::nearbyint(std::ldexp(x, -quantum_exp));
  return std::ldexp(q, quantum_exp);
}

// ---------------------------------------------------------------------------
// E8M0

inline constexpr int kE8m0Bias = 127;
inline constexpr int kE8m0MinExp = -127;
inline constexpr int kE8m0MaxExp = 127;

struct E8M0Scale {
  std::uint8_t biased_exponent = kE8m0Bias;  // 1.0

  static constexpr E8M0Scale from_exponent(int e) {
    return E8M0Scale{static_cast<std::uint8_t>(e + kE8m0Bias)};
  }
  constexpr bool valid() const { return biased_exponent != 0xFF; }
  constexpr int exponent() const { return int{biased_exponent} - kE8m0Bias; }
  double value() const {
    require(valid(), "E8M0 code 255 is reserved");
    return std::ldexp(1.0, exponent());
  }

  friend constexpr bool operator==(E8M0Scale, E8M0Scale) = default;
};

inline double decode_e8m0(E8M0Scale s) { return s.value(); }

struct E8m0Floor {
  E8M0Scale scale;
  bool clamped = false;
};

/// Scale from an exponent, clamped into the representable range.
constexpr E8m0Floor e8m0_from_exponent(int e) {
  if (e < kE8m0MinExp) return {E8M0Scale::from_exponent(kE8m0MinExp), true};
  if (e > kE8m0MaxExp) return {E8M0Scale::from_exponent(kE8m0MaxExp), true};
  return {E8M0Scale::from_exponent(e), false};
}

/// Largest power of two <= x.
inline E8m0Floor e8m0_floor(double x) {
  require(std::isfinite(x) && x > 0.0, "e8m0_floor: input must be positive and finite");
  return e8m0_from_exponent(std::ilogb(x));
}

// ---------------------------------------------------------------------------
// E4M3

inline constexpr double kE4m3Max = 448.0;

struct E4M3Value {
  std::uint8_t byte = 0;

  constexpr bool is_nan() const { return (byte & 0x7F) == 0x7F; }
  friend constexpr bool operator==(E4M3Value, E4M3Value) = default;
};

inline double decode_e4m3(E4M3Value c) {
  require(!c.is_nan(), "decode_e4m3: NaN code");
  const int exp_field = (c.byte >> 3) & 0xF;
  const int mant = c.byte & 0x7;
  const double mag = exp_field == 0 ? std::ldexp(mant, -9)
                                    : std::ldexp(8 + mant, exp_field - 7 - 3);
  return (c.byte & 0x80) ? -mag : mag;
}

/// Round-to-nearest-even onto the E4M3 value set; magnitudes above 448 clamp.
inline E4M3Value encode_e4m3(double v) {
  require(std::isfinite(v), "encode_e4m3: non-finite input");
  const std::uint8_t sign = std::signbit(v) ? 0x80 : 0x00;
  double mag = round_minifloat(std::fabs(v), 4, -6);
  if (mag > kE4m3Max) mag = kE4m3Max;
  if (mag == 0.0) return E4M3Value{sign};
  const int e = std::ilogb(mag);
  if (e < -6) {
    const auto mant = static_cast<std::uint8_t>(std::ldexp(mag, 9));
    return E4M3Value{static_cast<std::uint8_t>(sign | mant)};
  }
  const auto mant = static_cast<unsigned>(std::ldexp(mag, 3 - e)) - 8u;
  return E4M3Value{static_cast<std::uint8_t>(sign | ((e + 7) << 3) | mant)};
}

// ---------------------------------------------------------------------------
// FP16 (binary16)

inline double round_to_half(double v) {
  return std::copysign(round_minifloat(std::fabs(v), 11, -14), v);
}

inline std::uint16_t half_bits(double v) {
  require(std::isfinite(v), "half_bits: non-finite input");
  const std::uint16_t sign = std::signbit(v) ? 0x8000 : 0;
  const double mag = round_minifloat(std::fabs(v), 11, -14);
  require(mag <= 65504.0, "half_bits: value exceeds binary16 range");
  if (mag == 0.0) return sign;
  const int e = std::ilogb(mag);
  if (e < -14) return static_cast<std::uint16_t>(sign | static_cast<unsigned>(std::ldexp(mag, 24)));
  const auto mant = static_cast<unsigned>(std::ldexp(mag, 10 - e)) - 1024u;
  return static_cast<std::uint16_t>(sign | ((e + 15) << 10) | mant);
}

inline double half_value(std::uint16_t bits) {
  const int exp_field = (bits >> 10) & 0x1F;
  const int mant = bits & 0x3FF;
  require(exp_field != 0x1F, "half_value: inf/NaN");
  const double mag = exp_field == 0 ? std::ldexp(mant, -24)
                                    : std::ldexp(1024 + mant, exp_field - 15 - 10);
  return (bits & 0x8000) ? -mag : mag;
}

// ---------------------------------------------------------------------------
// Macro-block mantissa

/// Fraction m8/256 of a scale factor in [1, 2).
struct Mantissa8 {
  std::uint8_t m8 = 0;

  constexpr double factor() const { return 1.0 + m8 / 256.0; }

  /// Reciprocal factor as applied on the dequantization side, held at FP16
  /// precision. Always numerator/2^11 with numerator in [1024, 2048].
  double sigma() const { return round_to_half(1.0 / factor()); }
  std::uint32_t sigma_numerator() const {
    return static_cast<std::uint32_t>(std::ldexp(sigma(), 11));
  }

  friend constexpr auto operator<=>(Mantissa8, Mantissa8) = default;
};

inline constexpr std::uint32_t kFloatMantissa8Mask = 0x007F8000u;

/// Top eight fraction bits of the single-precision significand of `sf`.
inline Mantissa8 extract_mantissa8(float sf) {
  require(std::isfinite(sf) && sf > 0.0f, "extract_mantissa8: input must be positive and finite");
  // Subnormals carry leading zeros in the fraction field; normalise first.
  if (sf < std::numeric_limits<float>::min()) sf = std::ldexp(sf, 64);
  const auto bits = std::bit_cast<std::uint32_t>(sf);
  return Mantissa8{static_cast<std::uint8_t>((bits & kFloatMantissa8Mask) >> 15)};
}

}  // namespace mxq

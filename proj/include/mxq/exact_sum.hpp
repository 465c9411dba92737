// SPDX-License-Identifier: Apache-2.0
//
// Exact accumulator for sums of doubles. The running value is held as a
// fixed-point integer spanning the whole binary64 exponent range, split into
// 32-bit digits stored in int64 limbs so that deposits never need immediate
// carry propagation. Rounding happens exactly once, on read-out.
//
// Because the sum is exact, the result is independent of summation order,
// which is what lets the block-scaled GEMM and the dequantize-first oracle
// agree bit for bit.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

#include "mxq/error.hpp"

namespace mxq {

namespace detail {
__extension__ typedef __int128 int128;
__extension__ typedef unsigned __int128 uint128;
}

class ExactSum {
 public:
  static constexpr int kDigitBits = 32;
  static constexpr int kLimbs = 72;
  /// Weight of bit 0 of limb 0 is 2^kBaseExp.
  static constexpr int kBaseExp = -1152;

  void clear() {
    if (lo_ <= hi_) std::fill(limbs_.begin() + lo_, limbs_.begin() + hi_ + 1, 0);
    lo_ = kLimbs;
    hi_ = -1;
    pending_ = 0;
  }

  bool is_zero() const {
    for (int i = lo_; i <= hi_; ++i)
      if (limbs_[i] != 0) return false;
    return true;
  }

  void add(double x) {
    if (x == 0.0) return;
    require(std::isfinite(x), "ExactSum: non-finite term");
    int e = 0;
    const double f = std::frexp(std::fabs(x), &e);
    const auto m = static_cast<std::uint64_t>(std::ldexp(f, 53));
    deposit(m, e - 53 - kBaseExp, std::signbit(x));
  }

  /// Adds v * 2^exp.
  void add_int(detail::int128 v, int exp) {
    if (v == 0) return;
    const bool negative = v < 0;
    const detail::uint128 mag = negative ? -static_cast<detail::uint128>(v) : static_cast<detail::uint128>(v);
    deposit(static_cast<std::uint64_t>(mag), exp - kBaseExp, negative);
    if (const auto high = static_cast<std::uint64_t>(mag >> 64); high != 0) deposit(high, exp + 64 - kBaseExp, negative);
  }

  /// Value * 2^shift, correctly rounded (nearest-even) to single precision.
  float to_float(int shift = 0) const { return static_cast<float>(round_to(24, -126, 127, shift)); }

  /// Value * 2^shift, correctly rounded to double precision.
  double to_double(int shift = 0) const { return round_to(53, -1022, 1023, shift); }

 private:
  void deposit(std::uint64_t m, int pos, bool negative) {
    require(pos >= 0 && pos / kDigitBits + 3 < kLimbs, "ExactSum: term outside accumulator range");
    const int idx = pos / kDigitBits;
    detail::uint128 v = static_cast<detail::uint128>(m) << (pos % kDigitBits);
    int i = idx;
    while (v != 0) {
      const auto part = static_cast<std::int64_t>(static_cast<std::uint64_t>(v) & 0xFFFFFFFFu);
      limbs_[i] += negative ? -part : part;
      v >>= kDigitBits;
      ++i;
    }
    lo_ = std::min(lo_, idx);
    hi_ = std::max(hi_, i - 1);
    if (++pending_ >= (1u << 29)) normalize();
  }

  /// Digits in [0, 2^32) below the top limb, which carries the sign.
  void normalize() {
    if (hi_ < 0) return;
    for (int i = lo_; i < kLimbs - 1; ++i) {
      const std::int64_t carry = limbs_[i] >> kDigitBits;  // floor division
      limbs_[i] -= carry * (std::int64_t{1} << kDigitBits);
      limbs_[i + 1] += carry;
      if (carry != 0) hi_ = std::max(hi_, i + 1);
      if (i >= hi_ && carry == 0) break;
    }
    pending_ = 0;
    while (hi_ >= lo_ && limbs_[hi_] == 0) --hi_;
    if (hi_ < lo_) {
      lo_ = kLimbs;
      hi_ = -1;
    }
  }

  /// Replaces the value by its magnitude with normalised digits; returns
  /// whether it was negative.
  bool make_magnitude() {
    normalize();
    if (hi_ < 0 || limbs_[hi_] >= 0) return false;
    for (int i = lo_; i <= hi_; ++i) limbs_[i] = -limbs_[i];
    normalize();
    return true;
  }

  bool bit(int i) const {
    if (i < 0 || i >= kLimbs * kDigitBits) return false;
    return ((limbs_[i / kDigitBits] >> (i % kDigitBits)) & 1) != 0;
  }

  bool any_below(int i) const {
    if (i <= 0) return false;
    const int li = std::min(i / kDigitBits, kLimbs);
    for (int k = lo_; k < li; ++k)
      if (limbs_[k] != 0) return true;
    if (li < kLimbs) {
      const std::int64_t mask = (std::int64_t{1} << (i % kDigitBits)) - 1;
      if ((limbs_[li] & mask) != 0) return true;
    }
    return false;
  }

  double round_to(int precision, int min_exp, int max_exp, int shift) const {
    ExactSum mag = *this;
    const bool negative = mag.make_magnitude();
    if (mag.hi_ < 0) return 0.0;
    int top = mag.hi_ * kDigitBits + 63;
    while (!mag.bit(top)) --top;
    const int exponent = top + kBaseExp + shift;
    const int quantum = std::max(exponent, min_exp) - (precision - 1);
    const int qbit = quantum - kBaseExp - shift;
    std::uint64_t mant = 0;
    for (int i = top; i >= qbit; --i) mant = (mant << 1) | (mag.bit(i) ? 1u : 0u);
    const bool round = mag.bit(qbit - 1);
    const bool sticky = mag.any_below(qbit - 1);
    if (round && (sticky || (mant & 1u))) ++mant;
    double out = std::ldexp(static_cast<double>(mant), quantum);
    if (std::ilogb(out) > max_exp) out = std::numeric_limits<double>::infinity();
    return negative ? -out : out;
  }

  std::array<std::int64_t, kLimbs> limbs_{};
  int lo_ = kLimbs;
  int hi_ = -1;
  std::uint32_t pending_ = 0;
};

}  // namespace mxq

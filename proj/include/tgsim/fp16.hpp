#pragma once

// IEEE 754 binary16 software arithmetic. Every operation rounds once,
// to nearest, ties to even. Values are stored as raw 16-bit patterns
// (1 sign, 5 exponent, 10 mantissa); all arithmetic goes through
// binary64, which holds the exact sum/product of any two binary16
// values, so a single final rounding yields the correctly rounded
// binary16 result.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>

namespace tgsim {

struct Fp16 {
  uint16_t bits = 0;

  constexpr Fp16() = default;
  constexpr explicit Fp16(uint16_t b) : bits(b) {}

  static constexpr Fp16 from_bits(uint16_t b) { return Fp16(b); }

  static constexpr uint16_t kOne = 0x3C00;
  static constexpr uint16_t kInf = 0x7C00;
  static constexpr uint16_t kNegInf = 0xFC00;
  static constexpr uint16_t kNan = 0x7E00;
  static constexpr uint16_t kMaxFinite = 0x7BFF;   // 65504
  static constexpr uint16_t kLowestFinite = 0xFBFF; // -65504

  bool is_nan() const { return (bits & 0x7FFF) > 0x7C00; }
  bool is_inf() const { return (bits & 0x7FFF) == 0x7C00; }
  bool is_finite() const { return (bits & 0x7FFF) < 0x7C00; }
  bool is_zero() const { return (bits & 0x7FFF) == 0; }
  bool sign() const { return (bits & 0x8000) != 0; }

  friend bool operator==(Fp16 a, Fp16 b) { return a.bits == b.bits; }

  double to_double() const;
  float to_float() const { return static_cast<float>(to_double()); }

  // Round a binary64 value to binary16, RNE. Overflow goes to +/-Inf
  // (anything at or beyond the 65520 midpoint), NaN canonicalizes.
  static Fp16 from_double(double x) {
    if (std::isnan(x)) return Fp16(kNan);
    const uint64_t db = std::bit_cast<uint64_t>(x);
    const uint16_t s = static_cast<uint16_t>((db >> 63) << 15);
    const double ax = std::abs(x);
    if (ax >= 65520.0) return Fp16(static_cast<uint16_t>(s | kInf));
    if (ax == 0.0) return Fp16(s);

    const int e2 = static_cast<int>((db >> 52) & 0x7FF) - 1023;
    if (e2 < -1000) return Fp16(s); // double subnormal, far below binary16 range
    const uint64_t sig = (uint64_t(1) << 52) | (db & ((uint64_t(1) << 52) - 1));

    // Snap the exact significand onto the binary16 grid for this binade:
    // step 2^(e2-10) in the normal range, 2^-24 below it.
    const int grid_exp = (e2 >= -14) ? (e2 - 10) : -24;
    const int shift = grid_exp - e2 + 52;
    uint64_t q;
    if (shift >= 54) {
      q = 0;
    } else {
      q = sig >> shift;
      const uint64_t rem = sig & ((uint64_t(1) << shift) - 1);
      const uint64_t half = uint64_t(1) << (shift - 1);
      if (rem > half || (rem == half && (q & 1))) ++q;
    }

    if (e2 >= -14) {
      int e16 = e2;
      if (q == 2048) { // rounded up into the next binade
        q = 1024;
        ++e16;
      }
      if (e16 > 15) return Fp16(static_cast<uint16_t>(s | kInf));
      return Fp16(static_cast<uint16_t>(
          s | ((e16 + 15) << 10) | (q - 1024)));
    }
    // Subnormal target; q == 1024 lands exactly on the min normal encoding.
    return Fp16(static_cast<uint16_t>(s | q));
  }
};

namespace detail {

inline const std::array<double, 65536>& f16_table() {
  static const std::array<double, 65536> table = [] {
    std::array<double, 65536> t{};
    for (uint32_t b = 0; b < 65536; ++b) {
      const int s = (b >> 15) ? -1 : 1;
      const int e = (b >> 10) & 0x1F;
      const int m = b & 0x3FF;
      double v;
      if (e == 0) {
        v = std::ldexp(static_cast<double>(m), -24);
      } else if (e == 31) {
        v = m ? std::numeric_limits<double>::quiet_NaN()
              : std::numeric_limits<double>::infinity();
      } else {
        v = std::ldexp(static_cast<double>(1024 + m), e - 25);
      }
      t[b] = s * v;
    }
    return t;
  }();
  return table;
}

} // namespace detail

inline double Fp16::to_double() const { return detail::f16_table()[bits]; }

inline Fp16 f16(double x) { return Fp16::from_double(x); }

inline Fp16 f16_add(Fp16 a, Fp16 b) {
  return Fp16::from_double(a.to_double() + b.to_double());
}
inline Fp16 f16_sub(Fp16 a, Fp16 b) {
  return Fp16::from_double(a.to_double() - b.to_double());
}
inline Fp16 f16_mul(Fp16 a, Fp16 b) {
  return Fp16::from_double(a.to_double() * b.to_double());
}
inline Fp16 f16_recip(Fp16 a) {
  return Fp16::from_double(1.0 / a.to_double());
}
inline Fp16 f16_recip_sqrt(Fp16 a) {
  return Fp16::from_double(1.0 / std::sqrt(a.to_double()));
}
inline Fp16 f16_exp(Fp16 a) {
  return Fp16::from_double(std::exp(a.to_double()));
}

// Total order used by max/argmax reductions: NaN sorts below every
// value so a stray NaN cannot hijack an argmax.
inline bool f16_less(Fp16 a, Fp16 b) {
  if (a.is_nan()) return !b.is_nan();
  if (b.is_nan()) return false;
  return a.to_double() < b.to_double();
}

// Monotone integer rank of a bit pattern; +0 and -0 both map to 0.
inline int32_t f16_rank(Fp16 a) {
  const int32_t mag = a.bits & 0x7FFF;
  return (a.bits & 0x8000) ? -mag : mag;
}

// Distance in representable steps. NaN against anything is INT32_MAX.
inline int32_t f16_ulp_dist(Fp16 a, Fp16 b) {
  if (a.is_nan() || b.is_nan()) return INT32_MAX;
  const int64_t d = static_cast<int64_t>(f16_rank(a)) - f16_rank(b);
  return static_cast<int32_t>(d < 0 ? -d : d);
}

// ulp(x) at the binary16 scale of |x| (min subnormal step for tiny x).
inline double f16_ulp_at(double x) {
  const double ax = std::abs(x);
  if (ax < std::ldexp(1.0, -14)) return std::ldexp(1.0, -24);
  int e;
  std::frexp(ax, &e); // ax = m * 2^e, m in [0.5, 1)
  return std::ldexp(1.0, e - 11);
}

} // namespace tgsim

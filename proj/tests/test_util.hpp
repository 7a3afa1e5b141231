#pragma once

// Shared helpers for the test suites: a tiny deterministic RNG and an
// independent binary16 rounding oracle. The oracle deliberately takes a
// different route from tgsim::Fp16::from_double (libm frexp/ldexp and
// nearbyint in the default to-nearest mode instead of bit manipulation)
// so the two can check each other.

#include <cmath>
#include <cstdint>
#include <limits>

namespace testutil {

struct SplitMix64 {
  uint64_t state;
  explicit SplitMix64(uint64_t seed) : state(seed) {}
  uint64_t next() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  // uniform in [0, 1)
  double uniform() { return (next() >> 11) * 0x1.0p-53; }
  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  uint64_t below(uint64_t n) { return next() % n; }
};

inline uint16_t oracle_fp16_round(double x) {
  if (std::isnan(x)) return 0x7E00;
  const uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  double ax = std::fabs(x);
  if (std::isinf(ax)) return sign | 0x7C00;
  if (ax == 0.0) return sign;

  int e;
  std::frexp(ax, &e);
  const int binade = e - 1; // ax in [2^binade, 2^(binade+1))
  const int grid = (binade >= -14) ? binade - 10 : -24;
  const double v = std::ldexp(std::nearbyint(std::ldexp(ax, -grid)), grid);

  if (v >= 65536.0) return sign | 0x7C00;
  if (v == 0.0) return sign;
  if (v >= std::ldexp(1.0, -14)) {
    std::frexp(v, &e);
    const int be = e - 1;
    const auto mant = static_cast<uint64_t>(std::ldexp(v, 10 - be));
    return static_cast<uint16_t>(sign | ((be + 15) << 10) | (mant - 1024));
  }
  return static_cast<uint16_t>(sign | static_cast<uint64_t>(std::ldexp(v, 24)));
}

// Random bit pattern of a finite binary16 value, biased toward the
// normal range but covering subnormals and both signs.
inline uint16_t random_finite_f16(SplitMix64& rng) {
  for (;;) {
    auto b = static_cast<uint16_t>(rng.next() & 0xFFFF);
    if ((b & 0x7FFF) < 0x7C00) return b;
  }
}

} // namespace testutil

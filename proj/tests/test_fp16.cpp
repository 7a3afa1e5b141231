#include <catch2/catch_amalgamated.hpp>

#include "tgsim/fp16.hpp"
#include "test_util.hpp"

using tgsim::Fp16;
using tgsim::f16;

TEST_CASE("known encodings") {
  CHECK(f16(1.0).bits == 0x3C00);
  CHECK(f16(-0.0).bits == 0x8000);
  CHECK(f16(0.0).bits == 0x0000);
  CHECK(f16(65504.0).bits == Fp16::kMaxFinite);
  CHECK(f16(-65504.0).bits == Fp16::kLowestFinite);
  CHECK(f16(0.5).bits == 0x3800);
  CHECK(f16(2.0).bits == 0x4000);
  // smallest subnormal and smallest normal
  CHECK(f16(0x1.0p-24).bits == 0x0001);
  CHECK(f16(0x1.0p-14).bits == 0x0400);
}

TEST_CASE("overflow saturates to infinity at the 65520 midpoint") {
  // 65520 is the midpoint between 65504 and the next (unrepresentable)
  // step; round-to-nearest-even sends it up, i.e. to infinity.
  CHECK(f16(65520.0).bits == Fp16::kInf);
  CHECK(f16(65519.9999).bits == Fp16::kMaxFinite);
  CHECK(f16(-65520.0).bits == Fp16::kNegInf);
  CHECK(f16(1e30).bits == Fp16::kInf);
  CHECK(testutil::oracle_fp16_round(65520.0) == Fp16::kInf);
}

TEST_CASE("ties to even") {
  // 1 + 2^-11 sits exactly between 1.0 and 1 + 2^-10.
  CHECK(f16(1.0 + 0x1.0p-11).bits == 0x3C00);
  CHECK(f16(1.0 + 3 * 0x1.0p-11).bits == 0x3C02);
  // subnormal boundary: 2^-25 ties between 0 and the min subnormal
  CHECK(f16(0x1.0p-25).bits == 0x0000);
  CHECK(f16(0x1.8p-25).bits == 0x0001);
}

TEST_CASE("nan and infinity propagate") {
  const Fp16 nan = Fp16::from_bits(Fp16::kNan);
  const Fp16 inf = Fp16::from_bits(Fp16::kInf);
  CHECK(tgsim::f16_add(nan, f16(1.0)).is_nan());
  CHECK(tgsim::f16_mul(inf, f16(2.0)).is_inf());
  CHECK(tgsim::f16_sub(inf, inf).is_nan());
  CHECK(tgsim::f16_add(inf, f16(-1.0)).is_inf());
  CHECK(f16(std::numeric_limits<double>::quiet_NaN()).bits == Fp16::kNan);
}

TEST_CASE("round trip over all finite patterns") {
  for (uint32_t b = 0; b < 65536; ++b) {
    const Fp16 v = Fp16::from_bits(static_cast<uint16_t>(b));
    if (v.is_nan()) continue;
    CHECK(Fp16::from_double(v.to_double()).bits == b);
  }
}

TEST_CASE("rounding agrees with the independent oracle on random doubles") {
  testutil::SplitMix64 rng(0x5EED5EEDull);
  for (int i = 0; i < 100000; ++i) {
    double x;
    switch (i % 4) {
      case 0: x = rng.uniform(-70000.0, 70000.0); break;
      case 1: x = rng.uniform(-2.0, 2.0); break;
      case 2: x = rng.uniform(-1e-3, 1e-3); break;
      default: x = std::ldexp(rng.uniform(-1.0, 1.0), int(rng.below(50)) - 30);
    }
    INFO("x = " << x);
    REQUIRE(Fp16::from_double(x).bits == testutil::oracle_fp16_round(x));
  }
}

TEST_CASE("per-op results equal oracle rounding of the exact result") {
  // The exact sum/difference/product of two binary16 values is
  // representable in binary64, so oracle(exact) is the ground truth.
  testutil::SplitMix64 rng(0xC0FFEEull);
  for (int i = 0; i < 100000; ++i) {
    const Fp16 a = Fp16::from_bits(testutil::random_finite_f16(rng));
    const Fp16 b = Fp16::from_bits(testutil::random_finite_f16(rng));
    const double da = a.to_double(), db = b.to_double();
    INFO("a = " << da << " b = " << db);
    REQUIRE(tgsim::f16_add(a, b).bits == testutil::oracle_fp16_round(da + db));
    REQUIRE(tgsim::f16_sub(a, b).bits == testutil::oracle_fp16_round(da - db));
    REQUIRE(tgsim::f16_mul(a, b).bits == testutil::oracle_fp16_round(da * db));
  }
}

TEST_CASE("signed zero arithmetic") {
  const Fp16 pz = f16(0.0), nz = f16(-0.0);
  CHECK(tgsim::f16_add(pz, nz).bits == 0x0000);
  CHECK(tgsim::f16_add(nz, nz).bits == 0x8000);
  CHECK(tgsim::f16_mul(nz, f16(3.0)).bits == 0x8000);
}

TEST_CASE("ulp rank distance") {
  CHECK(tgsim::f16_ulp_dist(f16(1.0), f16(1.0)) == 0);
  CHECK(tgsim::f16_ulp_dist(f16(0.0), f16(-0.0)) == 0);
  CHECK(tgsim::f16_ulp_dist(f16(1.0), Fp16::from_bits(0x3C02)) == 2);
  CHECK(tgsim::f16_ulp_dist(Fp16::from_bits(0x0001), Fp16::from_bits(0x8001)) == 2);
  CHECK(tgsim::f16_ulp_dist(f16(1.0), Fp16::from_bits(Fp16::kNan)) == INT32_MAX);
}

TEST_CASE("nan orders below everything") {
  const Fp16 nan = Fp16::from_bits(Fp16::kNan);
  CHECK(tgsim::f16_less(nan, f16(-65504.0)));
  CHECK(!tgsim::f16_less(f16(0.0), nan));
  CHECK(!tgsim::f16_less(nan, nan));
}

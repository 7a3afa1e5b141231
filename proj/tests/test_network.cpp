#include <catch2/catch_amalgamated.hpp>

#include "tgsim/network.hpp"
#include "test_util.hpp"

using namespace tgsim;

namespace {
std::vector<Fp16> filled(size_t n, double v) {
  return std::vector<Fp16>(n, f16(v));
}
} // namespace

TEST_CASE("single core sync is the identity at zero cost") {
  const auto r = ring_sync({filled(8, 1.5)}, RingLink());
  CHECK(r.cycles == 0);
  CHECK(r.gathered == filled(8, 1.5));
}

TEST_CASE("four cores gather A|B|C|D in core-id order") {
  std::vector<std::vector<Fp16>> slices = {filled(4, 1), filled(4, 2),
                                           filled(4, 3), filled(4, 4)};
  const auto r = ring_sync(slices, RingLink());
  REQUIRE(r.gathered.size() == 16);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 4; ++i)
      CHECK(r.gathered[size_t(c) * 4 + i] == f16(c + 1));
}

TEST_CASE("hop cost: 768 fp16 elements over the default link") {
  // 12288 bits / (500 * 64/66) = 25.34 -> 26 transfer cycles per hop
  const RingLink link;
  CHECK(link.transfer_cycles(768) == 26);
  CHECK(link.hop_cycles(768) == 64 + 26);
  const auto r = ring_sync({filled(768, 0.5), filled(768, 0.25)}, link);
  CHECK(r.cycles == 90);

  // four cores: three hops
  const auto r4 = ring_sync(
      {filled(768, 1), filled(768, 2), filled(768, 3), filled(768, 4)}, link);
  CHECK(r4.cycles == 3 * 90);
}

TEST_CASE("gather result is independent of ring direction and start") {
  testutil::SplitMix64 rng(31);
  for (int n : {2, 3, 4, 8}) {
    std::vector<std::vector<Fp16>> slices;
    for (int c = 0; c < n; ++c) {
      std::vector<Fp16> s(16);
      for (auto& v : s) v = Fp16::from_bits(testutil::random_finite_f16(rng));
      slices.push_back(s);
    }
    const auto base = ring_sync(slices, RingLink());
    for (int dir : {+1, -1})
      for (int start = 0; start < n; ++start) {
        const auto r = ring_sync(slices, RingLink(), dir, start);
        CHECK(r.gathered == base.gathered);
        CHECK(r.cycles == base.cycles);
      }
  }
}

TEST_CASE("mismatched slice lengths and absent cores are errors") {
  CHECK_THROWS_AS(ring_sync({filled(4, 1), filled(5, 2)}, RingLink()), Error);
  CHECK_THROWS_AS(ring_sync({filled(4, 1), {}}, RingLink()), Error);
  CHECK_THROWS_AS(ring_sync({}, RingLink()), Error);
}

TEST_CASE("link parameter validation") {
  RingLink bad;
  bad.efficiency = 1.5;
  CHECK_THROWS_AS(bad.check(), Error);
  bad = RingLink();
  bad.bits_per_cycle = 0;
  CHECK_THROWS_AS(bad.check(), Error);
}

TEST_CASE("cost symmetry: equal slices cost the same on every core") {
  // the formula is shared, so symmetry reduces to determinism
  const RingLink link;
  const auto a = ring_sync({filled(32, 1), filled(32, 2), filled(32, 3),
                            filled(32, 4)},
                           link);
  const auto b = ring_sync({filled(32, 4), filled(32, 3), filled(32, 2),
                            filled(32, 1)},
                           link);
  CHECK(a.cycles == b.cycles);
}

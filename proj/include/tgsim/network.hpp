#pragma once
#define TGSIM_NETWORK_HPP_INCLUDED

// Ring-network router model: all-gather of per-core subvectors in n-1
// neighbor-forwarding steps, with a reorder stage keyed on the core ID
// so every core ends up holding the identical full vector.

#include <cstdint>
#include <vector>

#include "tgsim/config.hpp"
#include "tgsim/fp16.hpp"
#include "tgsim/memory.hpp"

namespace tgsim {

struct RingLink {
  double bits_per_cycle = 500.0;     // 100 Gb/s at a 200 MHz core clock
  double efficiency = 64.0 / 66.0;   // 64b/66b encoding overhead
  int64_t hop_latency = 64;          // fixed cycles per hop

  void check() const {
    if (bits_per_cycle <= 0) throw Error("ring link: bits_per_cycle must be positive");
    if (efficiency <= 0 || efficiency > 1)
      throw Error("ring link: efficiency must be in (0, 1]");
    if (hop_latency < 0) throw Error("ring link: hop latency cannot be negative");
  }

  int64_t transfer_cycles(int64_t elems, int bits_per_elem = 16) const {
    if (elems <= 0) return 0;
    const double bits = double(elems) * bits_per_elem;
    return int64_t(std::ceil(bits / (bits_per_cycle * efficiency)));
  }

  // one forwarding step for a slice of the given element count
  int64_t hop_cycles(int64_t slice_elems) const {
    return hop_latency + transfer_cycles(slice_elems);
  }
};

struct RingSyncResult {
  std::vector<Fp16> gathered; // identical on every core, core-ID order
  int64_t cycles = 0;         // cost charged to each core
};

// All-gather across the ring. Slices are indexed by owning core ID and
// must be equal-sized; each core forwards the slice it just received,
// so after n-1 steps everyone holds everything. Direction and starting
// neighbor only permute arrival order; the reorder module makes the
// result independent of both.
inline RingSyncResult ring_sync(const std::vector<std::vector<Fp16>>& slices,
                                const RingLink& link, int direction = +1,
                                int start_offset = 0) {
  link.check();
  const int n = int(slices.size());
  if (n == 0) throw Error("ring sync: no cores at the barrier");
  if (direction != 1 && direction != -1)
    throw Error("ring sync: direction must be +1 or -1");

  const size_t slice_len = slices[0].size();
  for (const auto& s : slices) {
    if (s.empty()) throw Error("ring sync: core absent at barrier");
    if (s.size() != slice_len) throw Error("ring sync: mismatched slice lengths");
  }

  RingSyncResult out;
  if (n == 1) {
    out.gathered = slices[0];
    out.cycles = 0;
    return out;
  }

  // simulate the forwarding steps; holding[c] = owner ids in arrival order
  (void)start_offset; // affects wiring only, never the reordered result
  std::vector<std::vector<int>> holding;
  holding.resize(size_t(n));
  std::vector<int> in_flight(size_t(n), 0);
  for (int c = 0; c < n; ++c) {
    holding[size_t(c)] = {c};
    in_flight[size_t(c)] = c;
  }
  for (int step = 0; step < n - 1; ++step) {
    std::vector<int> next(size_t(n), 0);
    for (int c = 0; c < n; ++c) {
      const int from = ((c - direction) % n + n) % n;
      next[size_t(c)] = in_flight[size_t(from)];
    }
    for (int c = 0; c < n; ++c) {
      holding[size_t(c)].push_back(next[size_t(c)]);
      in_flight[size_t(c)] = next[size_t(c)];
    }
  }

  // every core must now hold every owner exactly once
  for (int c = 0; c < n; ++c) {
    std::vector<bool> seen(size_t(n), false);
    for (int owner : holding[size_t(c)]) {
      if (seen[size_t(owner)]) throw Error("ring sync: duplicate slice in flight");
      seen[size_t(owner)] = true;
    }
    for (bool s : seen)
      if (!s) throw Error("ring sync: core absent at barrier");
  }

  // reorder by owning core ID, ascending
  out.gathered.reserve(slice_len * size_t(n));
  for (int owner = 0; owner < n; ++owner)
    out.gathered.insert(out.gathered.end(), slices[size_t(owner)].begin(),
                        slices[size_t(owner)].end());
  out.cycles = int64_t(n - 1) * link.hop_cycles(int64_t(slice_len));
  return out;
}

} // namespace tgsim

#pragma once
#define TGSIM_MEMORY_HPP_INCLUDED

// HBM and DDR memory models: the d x l tiling scheme with zigzag
// traversal, tiled weight shards streamed one full-width beat per
// cycle, the DDR ceiling cost model, and transpose-on-write for Value.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgsim/config.hpp"
#include "tgsim/fp16.hpp"
#include "tgsim/tensor.hpp"

namespace tgsim {

// One full-HBM-width beat carries d*l*bw_data = 32*512 bits per cycle.
struct TileGeom {
  int d = 64;        // tile dimension, rows per chunk
  int l = 16;        // lanes, columns per cycle
  int bw_data = 16;  // element width, bits

  TileGeom() = default;
  TileGeom(int d_, int l_, int bw_) : d(d_), l(l_), bw_data(bw_) { check(); }

  void check() const {
    if (d <= 0 || l <= 0 || bw_data <= 0)
      throw Error("tile geometry must be positive");
    if (int64_t(d) * l * bw_data != 32 * 512)
      throw Error("tile geometry must fill one 32x512-bit HBM beat");
    if (d % l != 0) throw Error("tile dimension must be a multiple of lanes");
  }

  // elements streamed per cycle; 1024 at the defaults
  int elems_per_beat() const { return d * l; }
};

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// Beats needed to stream a rows x cols matrix.
inline int64_t hbm_beats(int64_t rows, int64_t cols, const TileGeom& g) {
  if (rows <= 0 || cols <= 0) return 0;
  return ceil_div(cols, g.l) * ceil_div(rows, g.d);
}

// DDR cost: ceil(bytes / bytes_per_cycle), 38 GB/s at a 200 MHz core
// clock by default.
inline int64_t ddr_cycles(int64_t bytes, int64_t bytes_per_cycle = 190) {
  if (bytes <= 0) return 0;
  return ceil_div(bytes, bytes_per_cycle);
}

struct BeatCoord {
  int row_chunk;  // which d-row block
  int col_band;   // which d-column band
  int lane_group; // which l-column group inside the band

  bool operator==(const BeatCoord&) const = default;
};

// Zigzag traversal: for each column band of width d, walk the row
// chunks top to bottom, emitting the band's lane groups left to right.
// Exactly one partial-sum buffer of width d is live at any time.
inline std::vector<BeatCoord> tile_traversal(int64_t rows, int64_t cols,
                                             const TileGeom& g) {
  std::vector<BeatCoord> order;
  if (rows <= 0 || cols <= 0) return order;
  const int64_t bands = ceil_div(cols, g.d);
  const int64_t chunks = ceil_div(rows, g.d);
  order.reserve(size_t(hbm_beats(rows, cols, g)));
  for (int64_t b = 0; b < bands; ++b) {
    const int64_t band_cols = std::min<int64_t>(g.d, cols - b * g.d);
    const int64_t groups = ceil_div(band_cols, g.l);
    for (int64_t c = 0; c < chunks; ++c)
      for (int64_t k = 0; k < groups; ++k)
        order.push_back({int(c), int(b), int(k)});
  }
  return order;
}

// A weight shard tiled into beat order: each beat holds l columns of d
// elements, column-major inside the beat, ragged edges zero-padded.
struct TiledMatrix {
  int64_t rows = 0;      // input dimension
  int64_t cols = 0;      // owned output columns
  int64_t col_offset = 0; // first owned column in the full matrix
  TileGeom geom;
  std::vector<Fp16> data; // beats * d * l elements

  int64_t beats() const { return hbm_beats(rows, cols, geom); }

  std::span<const Fp16> beat(int64_t i) const {
    const size_t n = size_t(geom.d) * geom.l;
    return {data.data() + size_t(i) * n, n};
  }

  // column c of beat i as a contiguous d-element span
  std::span<const Fp16> beat_column(int64_t i, int lane) const {
    const size_t n = size_t(geom.d) * geom.l;
    return {data.data() + size_t(i) * n + size_t(lane) * geom.d,
            size_t(geom.d)};
  }
};

// Tiling is applied when a dense row-major shard is loaded.
inline TiledMatrix tile_matrix(const TensorF16& dense, const TileGeom& g,
                               int64_t col_offset = 0) {
  TiledMatrix t;
  t.rows = dense.rows;
  t.cols = dense.cols;
  t.col_offset = col_offset;
  t.geom = g;
  const auto order = tile_traversal(dense.rows, dense.cols, g);
  t.data.assign(order.size() * size_t(g.d) * g.l, Fp16());
  size_t out = 0;
  for (const BeatCoord& bc : order) {
    for (int lane = 0; lane < g.l; ++lane) {
      const int64_t col = int64_t(bc.col_band) * g.d +
                          int64_t(bc.lane_group) * g.l + lane;
      for (int r = 0; r < g.d; ++r, ++out) {
        const int64_t row = int64_t(bc.row_chunk) * g.d + r;
        if (row < dense.rows && col < dense.cols)
          t.data[out] = dense.at(int(row), int(col));
      }
    }
  }
  return t;
}

// Inverse of tile_matrix; the layout round-trip must be exact.
inline TensorF16 untile_matrix(const TiledMatrix& t) {
  TensorF16 dense(int(t.rows), int(t.cols));
  const auto order = tile_traversal(t.rows, t.cols, t.geom);
  size_t in = 0;
  for (const BeatCoord& bc : order) {
    for (int lane = 0; lane < t.geom.l; ++lane) {
      const int64_t col = int64_t(bc.col_band) * t.geom.d +
                          int64_t(bc.lane_group) * t.geom.l + lane;
      for (int r = 0; r < t.geom.d; ++r, ++in) {
        const int64_t row = int64_t(bc.row_chunk) * t.geom.d + r;
        if (row < t.rows && col < t.cols)
          dense.at(int(row), int(col)) = t.data[in];
      }
    }
  }
  return dense;
}

// HBM-resident tiled weight shards, keyed by symbol tag.
class WeightStore {
 public:
  void put(const std::string& tag, TiledMatrix m) {
    store_[tag] = std::move(m);
  }
  bool has(const std::string& tag) const { return store_.count(tag) != 0; }
  const TiledMatrix& get(const std::string& tag) const {
    const auto it = store_.find(tag);
    if (it == store_.end()) throw Error("weight store: unknown tag '" + tag + "'");
    return it->second;
  }

 private:
  std::unordered_map<std::string, TiledMatrix> store_;
};

// Beat stream for one tiled shard; stamps advance one per cycle at the
// modeled peak bandwidth.
struct BeatStream {
  const TiledMatrix* m = nullptr;
  int64_t beats = 0;
  int64_t cycle_of(int64_t beat) const { return beat; }
};

inline BeatStream dma_stream_weights(const WeightStore& store,
                                     const std::string& tag) {
  const TiledMatrix& m = store.get(tag);
  return {&m, m.beats()};
}

// DDR-resident parameters: dense row-major matrices / vectors plus the
// token I/O buffer.
class DdrStore {
 public:
  void put(const std::string& tag, TensorF16 m) { store_[tag] = std::move(m); }
  bool has(const std::string& tag) const { return store_.count(tag) != 0; }
  const TensorF16& get(const std::string& tag) const {
    const auto it = store_.find(tag);
    if (it == store_.end()) throw Error("ddr store: unknown tag '" + tag + "'");
    return it->second;
  }

  // access cost for a whole tag or an explicit element count
  int64_t access_cycles(const std::string& tag, int64_t bytes_per_cycle = 190) const {
    return ddr_cycles(get(tag).data.size() * 2, bytes_per_cycle);
  }

 private:
  std::unordered_map<std::string, TensorF16> store_;
};

// Transpose-on-write: Value rows stream out of the matrix unit in token
// order and land as columns of the stored transpose. The write overlaps
// Key/Query generation, so it adds no critical-path cycles; the cycle
// model accounts for it on the DMA engine.
inline void dma_write_value_transposed(KVCache& kv, int layer, int head,
                                       const std::vector<std::vector<Fp16>>& v_rows) {
  for (const auto& row : v_rows) kv.append_value(layer, head, row);
}

} // namespace tgsim

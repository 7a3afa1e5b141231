#pragma once
#define TGSIM_CORE_HPP_INCLUDED

// Compute-core function units and the cycle-latency model.
//
// Numerics: binary16 at every node. Matrix units multiply in FP16,
// reduce through a pairwise adder tree of depth log2(d) in FP16, chain
// partial sums across row chunks in tile-traversal order, and add the
// bias as the final step. There is no hidden wide accumulator.
//
// Cycle model: each instruction has an occupancy (cycles its unit is
// busy issuing/streaming) and a fill (pipeline latency until results
// are ready). Independent instructions overlap by occupancy only;
// dependents wait for occupancy + fill. The isolated cost of an
// instruction is occupancy + fill.

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tgsim/config.hpp"
#include "tgsim/fp16.hpp"
#include "tgsim/memory.hpp"
#include "tgsim/tensor.hpp"

namespace tgsim {

// -------------------------------------------------------------------------
// Latencies (cycles). Multiplier and adder map to DSP pipelines; load
// and store bypass execution entirely.
struct LatencyTable {
  int mul = 6;
  int add = 11;
  int sub = 11;
  int exp = 4;
  int load_store = 1;
  int recip = 11;
  int recip_sqrt = 11;
  int gelu = 17;      // LUT lookup feeds one mul + one add
  int cmp_stage = 1;  // per comparator-tree stage

  void check() const {
    if (mul <= 0 || add <= 0 || sub <= 0 || exp <= 0 || load_store <= 0 ||
        recip <= 0 || recip_sqrt <= 0 || gelu <= 0 || cmp_stage <= 0)
      throw Error("latency table entries must be positive");
  }

  static int tree_depth(int d) {
    int depth = 0;
    while ((1 << depth) < d) ++depth;
    return depth;
  }

  // multiply, adder tree, then the scalar chain/bias add
  int matrix_fill(int d) const { return mul + add * tree_depth(d) + add; }
};

struct UnitCost {
  int64_t occupancy = 0;
  int64_t fill = 0;
  int64_t total() const { return occupancy + fill; }
};

// Matrix op streaming a rows x cols shard: one beat per cycle against
// ceil(cols/l)*ceil(rows/d) compute beats, plus the pipeline fill.
inline UnitCost matrix_cost(int64_t rows, int64_t cols, int64_t stream_cycles,
                            const TileGeom& g, const LatencyTable& lat) {
  const int64_t compute = ceil_div(cols, g.l) * ceil_div(rows, g.d);
  return {std::max(stream_cycles, compute), lat.matrix_fill(g.d)};
}

inline UnitCost matrix_cost_hbm(int64_t rows, int64_t cols, const TileGeom& g,
                                const LatencyTable& lat) {
  return matrix_cost(rows, cols, hbm_beats(rows, cols, g), g, lat);
}

// Events worth reporting but not fatal.
struct UnitEvents {
  int64_t inf_results = 0; // reciprocal family hitting +/-Inf
};

// -------------------------------------------------------------------------
// Adder tree: fixed pairwise order over a d-wide frame, zero padded.

namespace detail {

inline double round16(double x) { return Fp16::from_double(x).to_double(); }

// Pairwise tree over exactly n live values (n <= frame); the frame is
// logically padded with +0 which cannot change the live lanes' pairing.
inline double tree_sum(std::span<const double> vals, int frame) {
  assert(int(vals.size()) <= frame);
  std::array<double, 1024> buf{};
  for (size_t i = 0; i < vals.size(); ++i) buf[i] = vals[i];
  for (int width = frame; width > 1; width = (width + 1) / 2) {
    for (int i = 0; i < width / 2; ++i)
      buf[i] = round16(buf[2 * i] + buf[2 * i + 1]);
    if (width & 1) buf[width / 2] = buf[width - 1];
  }
  return buf[0];
}

} // namespace detail

// Tree-sum of one <=d chunk, the SFU accumulation primitive.
inline Fp16 accum_tree(std::span<const Fp16> chunk, int d) {
  std::array<double, 1024> vals;
  for (size_t i = 0; i < chunk.size(); ++i) vals[i] = chunk[i].to_double();
  return Fp16::from_double(
      detail::tree_sum({vals.data(), chunk.size()}, d));
}

// Accumulate a vector wider than d: per-chunk trees chained in order.
inline Fp16 accum_wide(std::span<const Fp16> x, int d) {
  double s = 0;
  bool first = true;
  for (size_t base = 0; base < x.size(); base += size_t(d)) {
    const size_t n = std::min(size_t(d), x.size() - base);
    const double t = accum_tree(x.subspan(base, n), d).to_double();
    s = first ? t : detail::round16(s + t);
    first = false;
  }
  return Fp16::from_double(x.empty() ? 0.0 : s);
}

// -------------------------------------------------------------------------
// Matrix function unit

// y[r, j] = fp16-chained sum over row chunks of (d-wide product tree)
// plus bias[j]; chunk order follows the tile traversal. x is row-major
// x_rows by A.rows; inputs beyond A.rows never occur (padding lives in
// the tiled shard).
inline void exec_conv1d(const TiledMatrix& A, std::span<const Fp16> x,
                        int x_rows, std::span<const Fp16> bias,
                        std::span<Fp16> y) {
  const TileGeom& g = A.geom;
  const int64_t in_dim = A.rows, out_dim = A.cols;
  if (int64_t(x.size()) != in_dim * x_rows)
    throw Error("conv1d: input length does not match matrix rows");
  if (!bias.empty() && int64_t(bias.size()) != out_dim)
    throw Error("conv1d: bias length does not match owned columns");
  if (int64_t(y.size()) != out_dim * x_rows)
    throw Error("conv1d: output length does not match owned columns");

  const auto order = tile_traversal(in_dim, out_dim, g);
  std::vector<double> partial(size_t(g.d)); // one live band per traversal
  std::array<double, 1024> prod;

  for (int r = 0; r < x_rows; ++r) {
    const Fp16* xrow = x.data() + size_t(r) * in_dim;
    int64_t beat = 0;
    for (const BeatCoord& bc : order) {
      const int64_t row0 = int64_t(bc.row_chunk) * g.d;
      const int64_t live_rows = std::min<int64_t>(g.d, in_dim - row0);
      for (int lane = 0; lane < g.l; ++lane) {
        const int64_t col = int64_t(bc.col_band) * g.d +
                            int64_t(bc.lane_group) * g.l + lane;
        if (col >= out_dim) continue;
        const auto w = A.beat_column(beat, lane);
        for (int64_t i = 0; i < live_rows; ++i)
          prod[size_t(i)] =
              detail::round16(xrow[row0 + i].to_double() * w[i].to_double());
        for (int64_t i = live_rows; i < g.d; ++i) prod[size_t(i)] = 0.0;
        const double t = detail::tree_sum({prod.data(), size_t(g.d)}, g.d);
        const size_t band_slot = size_t(col % g.d);
        partial[band_slot] = bc.row_chunk == 0
                                 ? t
                                 : detail::round16(partial[band_slot] + t);
        // final chunk of this band: close out the column
        if (row0 + g.d >= in_dim) {
          double out = partial[band_slot];
          if (!bias.empty())
            out = detail::round16(out + bias[size_t(col)].to_double());
          y[size_t(r) * out_dim + size_t(col)] = Fp16::from_double(out);
        }
      }
      ++beat;
    }
  }
}

inline void exec_mm(const TiledMatrix& A, std::span<const Fp16> x, int x_rows,
                    std::span<Fp16> y) {
  exec_conv1d(A, x, x_rows, {}, y);
}

// Masked score row: row[i] = fp16 dot(q, key_i) for i <= token_idx,
// the closest representable value to -inf beyond it, plus the row max.
struct MaskedRow {
  std::vector<Fp16> row;
  Fp16 row_max;
};

inline MaskedRow exec_maskedmm(std::span<const Fp16> q, const KVCache& kv,
                               int layer, int head, int token_idx) {
  const int d_head = kv.d_head();
  const int t = kv.key_rows(layer, head);
  if (int(q.size()) != d_head)
    throw Error("maskedmm: query width must equal d_head");
  if (token_idx < 0 || token_idx >= t)
    throw Error("maskedmm: token index out of range");

  MaskedRow out;
  out.row.resize(t);
  std::array<double, 1024> prod;
  const Fp16 mask = Fp16::from_bits(Fp16::kLowestFinite);
  Fp16 best = mask;
  for (int i = 0; i < t; ++i) {
    if (i > token_idx) {
      out.row[i] = mask;
      continue;
    }
    for (int r = 0; r < d_head; ++r)
      prod[size_t(r)] = detail::round16(q[size_t(r)].to_double() *
                                        kv.key_at(layer, head, i, r).to_double());
    out.row[i] =
        Fp16::from_double(detail::tree_sum({prod.data(), size_t(d_head)}, d_head));
    if (i == 0 || f16_less(best, out.row[i])) best = out.row[i];
  }
  out.row_max = best;
  return out;
}

// Score x Value for one head: y[c] = sum_i score[i] * value_t[c, i].
inline std::vector<Fp16> exec_attend(std::span<const Fp16> score,
                                     const KVCache& kv, int layer, int head,
                                     int d) {
  const int t = kv.value_cols(layer, head);
  const int d_head = kv.d_head();
  if (int(score.size()) != t)
    throw Error("attend: score length must equal cached tokens");
  std::vector<Fp16> y(size_t(d_head), Fp16{});
  std::array<double, 1024> prod;
  // chunk over tokens like a streamed t x d_head matrix
  for (int c = 0; c < d_head; ++c) {
    double acc = 0;
    bool first = true;
    for (int base = 0; base < t; base += d) {
      const int n = std::min(d, t - base);
      for (int i = 0; i < n; ++i)
        prod[size_t(i)] = detail::round16(
            score[size_t(base + i)].to_double() *
            kv.value_t_at(layer, head, c, base + i).to_double());
      for (int i = n; i < d; ++i) prod[size_t(i)] = 0.0;
      const double tval = detail::tree_sum({prod.data(), size_t(d)}, d);
      acc = first ? tval : detail::round16(acc + tval);
      first = false;
    }
    y[size_t(c)] = Fp16::from_double(acc);
  }
  return y;
}

// -------------------------------------------------------------------------
// Vector function unit

enum class VfuOp { Add, Sub, Mul, Exp };

// Elementwise ops; b empty means unary, b of size 1 broadcasts.
inline void exec_vfu(VfuOp op, std::span<const Fp16> a, std::span<const Fp16> b,
                     std::span<Fp16> y) {
  if (y.size() != a.size()) throw Error("vfu: output width mismatch");
  const bool broadcast = b.size() == 1;
  if (op != VfuOp::Exp && !broadcast && b.size() != a.size())
    throw Error("vfu: operand width mismatch");
  for (size_t i = 0; i < a.size(); ++i) {
    const double av = a[i].to_double();
    switch (op) {
      case VfuOp::Add:
        y[i] = Fp16::from_double(av + b[broadcast ? 0 : i].to_double());
        break;
      case VfuOp::Sub:
        y[i] = Fp16::from_double(av - b[broadcast ? 0 : i].to_double());
        break;
      case VfuOp::Mul:
        y[i] = Fp16::from_double(av * b[broadcast ? 0 : i].to_double());
        break;
      case VfuOp::Exp:
        y[i] = Fp16::from_double(std::exp(av));
        break;
    }
  }
}

inline Fp16 exec_recip(Fp16 a, UnitEvents* ev = nullptr) {
  const Fp16 r = f16_recip(a);
  if (ev && r.is_inf()) ++ev->inf_results;
  return r;
}

inline Fp16 exec_recip_sqrt(Fp16 a, UnitEvents* ev = nullptr) {
  const Fp16 r = f16_recip_sqrt(a);
  if (ev && (r.is_inf() || r.is_nan())) ++ev->inf_results;
  return r;
}

// max / argmax under a total order with NaN below all values;
// argmax ties resolve to the lowest index.
struct ReduMaxResult {
  Fp16 max;
  int argmax = 0;
};

inline ReduMaxResult exec_redu_max(std::span<const Fp16> x) {
  if (x.empty()) throw Error("redu_max: empty input");
  ReduMaxResult r{x[0], 0};
  for (size_t i = 1; i < x.size(); ++i)
    if (f16_less(r.max, x[i])) {
      r.max = x[i];
      r.argmax = int(i);
    }
  return r;
}

// -------------------------------------------------------------------------
// GELU lookup table: 2048 samples spanning [-8, 8] with per-segment
// linear coefficients in FP16. At every sample input the table output
// bit-equals fp16(gelu(x)); outside the range gelu saturates to 0 on
// the left and to x on the right.

namespace detail {

inline double gelu_formula(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

} // namespace detail

class GeluLut {
 public:
  static constexpr int kSamples = 2048;
  static constexpr double kLo = -8.0, kHi = 8.0;

  GeluLut() {
    const double h = (kHi - kLo) / kSamples; // 1/128, exact in binary16
    for (int i = 0; i <= kSamples; ++i) {
      Fp16 nv = Fp16::from_double(detail::gelu_formula(kLo + i * h));
      // zero entries are stored unsigned: the interpolation add
      // (node + 0 * slope) cannot reproduce a negative zero anyway
      if (nv.bits == 0x8000) nv = Fp16();
      node_[i] = nv;
    }
    for (int i = 0; i < kSamples; ++i)
      slope_[i] = Fp16::from_double(
          (node_[i + 1].to_double() - node_[i].to_double()) / h);
    // exactness invariant, by construction
    for (int i = 0; i < kSamples; ++i) {
      const Fp16 xi = Fp16::from_double(kLo + i * h);
      if (!(eval(xi) == node_[i]))
        throw Error("gelu lut: node exactness violated");
    }
  }

  Fp16 node(int i) const { return node_[i]; }
  Fp16 slope(int i) const { return slope_[i]; }

  Fp16 eval(Fp16 x) const {
    if (x.is_nan()) return x;
    const double v = x.to_double();
    if (v < kLo) return Fp16();       // saturates to zero
    if (v > kHi) return x;            // identity tail
    int i = int((v - kLo) * 128.0);
    if (i >= kSamples) i = kSamples - 1;
    const Fp16 xi = Fp16::from_double(kLo + i * (1.0 / 128.0));
    const Fp16 dx = f16_sub(x, xi);
    return f16_add(node_[i], f16_mul(dx, slope_[i]));
  }

  static const GeluLut& instance() {
    static const GeluLut lut;
    return lut;
  }

 private:
  std::array<Fp16, kSamples + 1> node_;
  std::array<Fp16, kSamples> slope_;
};

inline void exec_gelu(std::span<const Fp16> x, std::span<Fp16> y) {
  const GeluLut& lut = GeluLut::instance();
  for (size_t i = 0; i < x.size(); ++i) y[i] = lut.eval(x[i]);
}

// -------------------------------------------------------------------------
// Macro expansions (the vector-instruction compositions the emitter
// produces; kept here so unit tests can exercise them directly).

// y_i = g_i * (x_i - mu) / sigma + b_i with sigma = sqrt(mean((x-mu)^2) + eps);
// divisions run as multiplications by precomputed FP16 reciprocals.
inline std::vector<Fp16> macro_layernorm(std::span<const Fp16> x,
                                         std::span<const Fp16> gamma,
                                         std::span<const Fp16> beta,
                                         int d = 64, double eps = 1e-5) {
  const size_t n = x.size();
  if (gamma.size() != n || beta.size() != n)
    throw Error("layernorm: parameter width mismatch");
  const Fp16 recip_n = f16(1.0 / double(n));
  const Fp16 sum = accum_wide(x, d);
  const Fp16 mu = f16_mul(sum, recip_n);

  std::vector<Fp16> t(n), sq(n);
  exec_vfu(VfuOp::Sub, x, {&mu, 1}, t);
  exec_vfu(VfuOp::Mul, t, t, sq);
  const Fp16 var = f16_mul(accum_wide(sq, d), recip_n);
  const Fp16 rstd = exec_recip_sqrt(f16_add(var, f16(eps)));

  std::vector<Fp16> y(n);
  exec_vfu(VfuOp::Sub, x, {&mu, 1}, t); // recompute x - mu
  exec_vfu(VfuOp::Mul, t, {&rstd, 1}, t);
  exec_vfu(VfuOp::Mul, t, gamma, t);
  exec_vfu(VfuOp::Add, t, beta, y);
  return y;
}

// y_i = exp(x_i - x_max) / sum_j exp(x_j - x_max) via exp, accum, recip, mul.
inline std::vector<Fp16> macro_softmax(std::span<const Fp16> x, Fp16 x_max,
                                       int d = 64, UnitEvents* ev = nullptr) {
  std::vector<Fp16> e(x.size());
  exec_vfu(VfuOp::Sub, x, {&x_max, 1}, e);
  exec_vfu(VfuOp::Exp, e, {}, e);
  const Fp16 sum = accum_wide(e, d);
  const Fp16 r = exec_recip(sum, ev);
  std::vector<Fp16> y(x.size());
  exec_vfu(VfuOp::Mul, e, {&r, 1}, y);
  return y;
}

// -------------------------------------------------------------------------
// Register file with per-address stale tracking (the scoreboard state).

struct RegisterFile {
  int d = 64;
  int n_vregs = 64;
  int n_sregs = 64;
  std::vector<Fp16> v;     // n_vregs * d
  std::vector<Fp16> s;     // n_sregs
  std::vector<bool> v_stale, s_stale;

  explicit RegisterFile(int d_ = 64, int nv = 64, int ns = 64)
      : d(d_), n_vregs(nv), n_sregs(ns), v(size_t(nv) * d_), s(size_t(ns)),
        v_stale(size_t(nv), false), s_stale(size_t(ns), false) {}

  std::span<Fp16> vwin(int base, int count) {
    return {v.data() + size_t(base) * d, size_t(count) * d};
  }
  std::span<const Fp16> vwin(int base, int count) const {
    return {v.data() + size_t(base) * d, size_t(count) * d};
  }
};

enum class IssueDecision { Issue, Stall };

// Stall iff any source or destination address of the instruction is
// stale; on issue the destinations go stale until writeback.
struct ScoreboardQuery {
  std::vector<std::pair<bool, int>> reads;  // (is_vector, index)
  std::vector<std::pair<bool, int>> writes;
};

inline IssueDecision scoreboard_issue(const ScoreboardQuery& q,
                                      RegisterFile& rf) {
  auto stale = [&](bool vec, int i) {
    return vec ? rf.v_stale[size_t(i)] : rf.s_stale[size_t(i)];
  };
  for (const auto& [vec, i] : q.reads)
    if (stale(vec, i)) return IssueDecision::Stall;
  for (const auto& [vec, i] : q.writes)
    if (stale(vec, i)) return IssueDecision::Stall;
  for (const auto& [vec, i] : q.writes)
    (vec ? rf.v_stale[size_t(i)] : rf.s_stale[size_t(i)]) = true;
  return IssueDecision::Issue;
}

inline void scoreboard_writeback(const ScoreboardQuery& q, RegisterFile& rf) {
  for (const auto& [vec, i] : q.writes)
    (vec ? rf.v_stale[size_t(i)] : rf.s_stale[size_t(i)]) = false;
}

} // namespace tgsim

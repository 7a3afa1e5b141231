#pragma once
#define TGSIM_CODEGEN_HPP_INCLUDED

// Program generation: per-core instruction streams for end-to-end
// inference. The summarization stage runs layer-by-layer with batched
// matrix instructions over all context tokens (weights stream once per
// site) and per-token vector/attention/sync work; each generation pass
// is a single-token walk of the full layer stack with its output token
// fed back through the DDR token buffer.
//
// Value residence: values of at most 16 chunks live in one of four
// fixed vector-register windows (v0/v16/v32/v48); anything wider, and
// every batched summarization intermediate, lives in DDR scratch.
// Layout per generation pass:
//   v0  : activation / residual carrier
//   v16 : lnorm1 -> score row -> lnorm2 -> ffn2 gather
//   v32 : q (owned heads) -> c_attn gather
//   v48 : attention gather -> ffn1 gather
//
// The four ring syncs per decoder layer and token pass sit after the
// head loop (attn), the attention projection (c_attn), the first FFN
// matrix (ffn1) and the second (ffn2).

#include <string>
#include <vector>

#include "tgsim/config.hpp"
#include "tgsim/isa.hpp"
#include "tgsim/memory.hpp"

namespace tgsim {

struct ShardSpec {
  int core_id = 0;
  int n_cores = 1;
  int head_lo = 0, head_hi = 0; // owned attention heads, half-open

  struct Range {
    int64_t lo = 0, hi = 0;
    int64_t len() const { return hi - lo; }
  };
  Range qkv_cols;  // owned output columns of the Q/K/V projections
  Range attn_cols; // owned output columns of the attention projection
  Range ffn1_cols; // owned output columns of the first FFN matrix
  Range ffn2_cols; // owned output columns of the second FFN matrix

  int owned_heads() const { return head_hi - head_lo; }
};

// Equal-sized, disjoint, complete head and column partitions.
inline std::vector<ShardSpec> make_shards(const GPTConfig& cfg, int n_cores) {
  cfg.validate();
  if (n_cores < 1) throw Error("make_shards: need at least one core");
  if (cfg.n_head % n_cores != 0)
    throw Error("make_shards: core count must divide the head count");
  std::vector<ShardSpec> out;
  const int heads_per = cfg.n_head / n_cores;
  const int64_t emb = cfg.emb, ffn = cfg.ffn_dim();
  for (int c = 0; c < n_cores; ++c) {
    ShardSpec s;
    s.core_id = c;
    s.n_cores = n_cores;
    s.head_lo = c * heads_per;
    s.head_hi = (c + 1) * heads_per;
    s.qkv_cols = {int64_t(s.head_lo) * cfg.d_head, int64_t(s.head_hi) * cfg.d_head};
    s.attn_cols = {c * emb / n_cores, (c + 1) * emb / n_cores};
    s.ffn1_cols = {c * ffn / n_cores, (c + 1) * ffn / n_cores};
    s.ffn2_cols = {c * emb / n_cores, (c + 1) * emb / n_cores};
    out.push_back(s);
  }
  return out;
}

namespace cg {

// Scalar registers rotate over four banks of eight so that independent
// per-token / per-head sequences never share temporaries; without the
// rotation their pipeline fills would serialize on false write-after-
// write dependences.
constexpr int kScalarBanks = 4;
constexpr int kSumReg = 0;
constexpr int kMuReg = 1;
constexpr int kVarSumReg = 2;
constexpr int kVarReg = 3;
constexpr int kRstdReg = 4;
constexpr int kMaxReg = 5;
constexpr int kDenomReg = 6;
constexpr int kRecipReg = 7;
inline int sreg_in_bank(int reg, int bank) {
  return (bank % kScalarBanks) * 8 + reg;
}
constexpr int kRecipEmbReg = 56;
constexpr int kEpsReg = 57;
constexpr int kQScaleReg = 58;

constexpr int kWin0 = 0, kWin1 = 16, kWin2 = 32, kWin3 = 48;
constexpr int kWinChunks = 16;

// A value's home: either a register window or a DDR scratch slice.
struct Loc {
  Operand op;     // full-width operand
  int64_t elems = 0;

  bool in_regs() const { return op.space == Space::VReg; }

  // contiguous element slice [off, off+len)
  Operand slice(int64_t off, int64_t len, int d) const {
    if (!in_regs())
      return Operand::mem(op.space, op.tag, op.off + off, len);
    if (off % d != 0 || len % d != 0)
      throw Error("codegen: register slices must be chunk aligned");
    return Operand::vreg(op.index + int(off / d), int(len / d));
  }
};

struct EmitCtx {
  GPTConfig cfg;
  ShardSpec shard;
  TileGeom geom;
  Program* prog = nullptr;

  int d() const { return geom.d; }
  bool fits_regs(int64_t elems) const { return elems <= int64_t(kWinChunks) * d(); }
  int chunks(int64_t elems) const { return int(ceil_div(elems, d())); }

  void emit(Instr in) { prog->instrs.push_back(std::move(in)); }

  void sym(Space space, const std::string& tag, int64_t rows, int64_t cols,
           int tok = -1) {
    if (!prog->find_symbol(tag)) prog->add_symbol({space, tag, rows, cols, tok});
  }

  Loc window(int base, int64_t elems) const {
    return {Operand::vreg(base, chunks(elems)), elems};
  }
  Loc scratch(const std::string& tag, int64_t rows, int64_t cols) {
    sym(Space::Ddr, tag, rows, cols);
    return {Operand::mem(Space::Ddr, tag), rows * cols};
  }
  // window when it fits, named scratch otherwise
  Loc home(int win_base, const std::string& tag, int64_t elems) {
    if (fits_regs(elems)) return window(win_base, elems);
    return scratch(tag, 1, elems);
  }

  Operand bias_slice(const std::string& tag, const ShardSpec::Range& r) {
    return Operand::mem(Space::Ddr, tag, r.lo, r.len());
  }

  std::string lt(const char* stem, int layer) const {
    return std::string(stem) + "." + std::to_string(layer);
  }
};

inline Instr compute(Op op, Operand dst, Operand src1, Operand src2 = {}) {
  Instr in;
  in.op = op;
  in.dst = std::move(dst);
  in.src1 = std::move(src1);
  in.src2 = std::move(src2);
  return in;
}

// layer normalization as its vector-instruction expansion
inline void emit_layernorm(EmitCtx& E, const Loc& dst, const Loc& src,
                           const std::string& g_tag, const std::string& b_tag,
                           int bank = 0) {
  const int64_t n = src.elems;
  const Operand x = src.slice(0, n, E.d());
  const Operand y = dst.slice(0, n, E.d());
  const Operand params_g = Operand::mem(Space::Ddr, g_tag, 0, n);
  const Operand params_b = Operand::mem(Space::Ddr, b_tag, 0, n);
  const Operand sum = Operand::sreg(sreg_in_bank(kSumReg, bank));
  const Operand mu = Operand::sreg(sreg_in_bank(kMuReg, bank));
  const Operand var_sum = Operand::sreg(sreg_in_bank(kVarSumReg, bank));
  const Operand var = Operand::sreg(sreg_in_bank(kVarReg, bank));
  const Operand rstd = Operand::sreg(sreg_in_bank(kRstdReg, bank));
  E.emit(compute(Op::Accum, sum, x));
  E.emit(compute(Op::Mul, mu, sum, Operand::sreg(kRecipEmbReg)));
  E.emit(compute(Op::Sub, y, x, mu));
  E.emit(compute(Op::Mul, y, y, y));
  E.emit(compute(Op::Accum, var_sum, y));
  E.emit(compute(Op::Mul, var, var_sum, Operand::sreg(kRecipEmbReg)));
  E.emit(compute(Op::Add, var, var, Operand::sreg(kEpsReg)));
  E.emit(compute(Op::RecipSqrt, rstd, var));
  E.emit(compute(Op::Sub, y, x, mu));
  E.emit(compute(Op::Mul, y, y, rstd));
  E.emit(compute(Op::Mul, y, y, params_g));
  E.emit(compute(Op::Add, y, y, params_b));
}

// stabilized softmax over a score row held in `row`
inline void emit_softmax(EmitCtx& E, const Operand& row, int bank = 0) {
  const Operand mx = Operand::sreg(sreg_in_bank(kMaxReg, bank));
  const Operand denom = Operand::sreg(sreg_in_bank(kDenomReg, bank));
  const Operand recip = Operand::sreg(sreg_in_bank(kRecipReg, bank));
  E.emit(compute(Op::ReduMax, mx, row));
  E.emit(compute(Op::Sub, row, row, mx));
  E.emit(compute(Op::Exp, row, row));
  E.emit(compute(Op::Accum, denom, row));
  E.emit(compute(Op::Recip, recip, denom));
  E.emit(compute(Op::Mul, row, row, recip));
}

// one send/recv pair: ship the owned slice, gather the full vector
inline void emit_sync(EmitCtx& E, const Operand& own_slice,
                      const Operand& full_dst) {
  if (E.shard.n_cores <= 1) return;
  Instr send;
  send.op = Op::Send;
  send.src1 = own_slice;
  send.dst = Operand::peer();
  send.xfer = own_slice.space == Space::VReg ? int64_t(own_slice.count) * E.d()
                                             : own_slice.len;
  E.emit(send);
  Instr recv;
  recv.op = Op::Recv;
  recv.src1 = Operand::peer();
  recv.dst = full_dst;
  recv.xfer = send.xfer;
  E.emit(recv);
}

inline Instr matrix(Op op, Operand dst, const std::string& w_tag, Operand bias,
                    Operand x, int rows = 1) {
  Instr in = compute(op, std::move(dst), Operand::mem(Space::Hbm, w_tag),
                     std::move(bias));
  in.x = std::move(x);
  in.rows = rows;
  return in;
}

struct LayerLocs {
  Loc x, ln1, q, score, attnf, catf, ln2, f1f, f2f;
  Loc vrow, krow;
};

// Single-token decoder layer (the generation-pass shape).
// cache_rows: K/V rows present after this pass's append.
inline void emit_layer_single(EmitCtx& E, int layer, const LayerLocs& L,
                              int cache_rows) {
  const GPTConfig& cfg = E.cfg;
  const ShardSpec& S = E.shard;
  const int d = E.d();
  const int dh = cfg.d_head;
  const int64_t emb = cfg.emb;
  const int64_t own_qkv = S.qkv_cols.len();

  emit_layernorm(E, L.ln1, L.x, E.lt("ln1g", layer), E.lt("ln1b", layer), 0);

  // Value first: its transpose-on-write overlaps Key/Query generation
  E.emit(matrix(Op::Conv1D, L.vrow.slice(0, own_qkv, d), E.lt("wv", layer),
                E.bias_slice(E.lt("bv", layer), S.qkv_cols),
                L.ln1.slice(0, emb, d)));
  for (int h = S.head_lo; h < S.head_hi; ++h) {
    Instr wk;
    wk.op = Op::WriteKv;
    wk.src1 = L.vrow.slice(int64_t(h - S.head_lo) * dh, dh, d);
    wk.dst = Operand::mem(Space::Hbm,
                          "vc." + std::to_string(layer) + "." + std::to_string(h));
    wk.xfer = dh;
    E.emit(wk);
  }
  E.emit(matrix(Op::Conv1D, L.krow.slice(0, own_qkv, d), E.lt("wk", layer),
                E.bias_slice(E.lt("bk", layer), S.qkv_cols),
                L.ln1.slice(0, emb, d)));
  for (int h = S.head_lo; h < S.head_hi; ++h) {
    Instr wk;
    wk.op = Op::WriteKv;
    wk.src1 = L.krow.slice(int64_t(h - S.head_lo) * dh, dh, d);
    wk.dst = Operand::mem(Space::Hbm,
                          "kc." + std::to_string(layer) + "." + std::to_string(h));
    wk.xfer = dh;
    E.emit(wk);
  }
  E.emit(matrix(Op::Conv1D, L.q.slice(0, own_qkv, d), E.lt("wq", layer),
                E.bias_slice(E.lt("bq", layer), S.qkv_cols),
                L.ln1.slice(0, emb, d)));
  // scores scale by 1/sqrt(d_head) ahead of the masked multiply
  E.emit(compute(Op::Mul, L.q.slice(0, own_qkv, d), L.q.slice(0, own_qkv, d),
                 Operand::sreg(kQScaleReg)));

  // independent heads rotate over score banks so their chains overlap
  const int score_chunks = E.chunks(cache_rows);
  const int nbanks =
      L.score.in_regs()
          ? std::max(1, std::min(kScalarBanks, kWinChunks / score_chunks))
          : kScalarBanks;
  for (int h = S.head_lo; h < S.head_hi; ++h) {
    const int bank = (h - S.head_lo) % nbanks;
    const Operand score =
        L.score.in_regs()
            ? Operand::vreg(kWin1 + bank * score_chunks, score_chunks)
            : Operand::mem(Space::Ddr, "g_score." + std::to_string(bank), 0,
                           cache_rows);
    Instr mmm = matrix(Op::MaskedMM, score,
                       "kc." + std::to_string(layer) + "." + std::to_string(h),
                       Operand::none(),
                       L.q.slice(int64_t(h - S.head_lo) * dh, dh, d));
    E.emit(mmm);
    emit_softmax(E, score, bank);
    E.emit(matrix(Op::MM, L.attnf.slice(int64_t(h) * dh, dh, d),
                  "vc." + std::to_string(layer) + "." + std::to_string(h),
                  Operand::none(), score));
  }
  emit_sync(E, L.attnf.slice(S.qkv_cols.lo, own_qkv, d),
            L.attnf.slice(0, emb, d)); // sync 1: attn

  E.emit(matrix(Op::Conv1D, L.catf.slice(S.attn_cols.lo, S.attn_cols.len(), d),
                E.lt("wa", layer), E.bias_slice(E.lt("ba", layer), S.attn_cols),
                L.attnf.slice(0, emb, d)));
  emit_sync(E, L.catf.slice(S.attn_cols.lo, S.attn_cols.len(), d),
            L.catf.slice(0, emb, d)); // sync 2: c_attn

  E.emit(compute(Op::Add, L.catf.slice(0, emb, d), L.catf.slice(0, emb, d),
                 L.x.slice(0, emb, d))); // residual

  emit_layernorm(E, L.ln2, L.catf, E.lt("ln2g", layer), E.lt("ln2b", layer), 1);

  E.emit(matrix(Op::Conv1D, L.f1f.slice(S.ffn1_cols.lo, S.ffn1_cols.len(), d),
                E.lt("wf1", layer), E.bias_slice(E.lt("bf1", layer), S.ffn1_cols),
                L.ln2.slice(0, emb, d)));
  E.emit(compute(Op::Gelu, L.f1f.slice(S.ffn1_cols.lo, S.ffn1_cols.len(), d),
                 L.f1f.slice(S.ffn1_cols.lo, S.ffn1_cols.len(), d)));
  emit_sync(E, L.f1f.slice(S.ffn1_cols.lo, S.ffn1_cols.len(), d),
            L.f1f.slice(0, cfg.ffn_dim(), d)); // sync 3: ffn1

  E.emit(matrix(Op::Conv1D, L.f2f.slice(S.ffn2_cols.lo, S.ffn2_cols.len(), d),
                E.lt("wf2", layer), E.bias_slice(E.lt("bf2", layer), S.ffn2_cols),
                L.f1f.slice(0, cfg.ffn_dim(), d)));
  emit_sync(E, L.f2f.slice(S.ffn2_cols.lo, S.ffn2_cols.len(), d),
            L.f2f.slice(0, emb, d)); // sync 4: ffn2

  E.emit(compute(Op::Add, L.x.slice(0, emb, d), L.f2f.slice(0, emb, d),
                 L.catf.slice(0, emb, d))); // residual -> next layer input
}

} // namespace cg

// ---------------------------------------------------------------------------
// Public emitters

// Token embedding: WTE[token] + WPE[position] into dst.
// token_slot indexes the DDR token buffer; position is static.
inline std::vector<Instr> emit_embedding(const GPTConfig& cfg,
                                         const cg::Loc& dst,
                                         const cg::Loc& wpe_buf, int token_slot,
                                         int position, int d = 64) {
  std::vector<Instr> out;
  Instr rd_wte;
  rd_wte.op = Op::ReadDdr;
  rd_wte.src1 = Operand::mem(Space::Ddr, "wte");
  rd_wte.dst = dst.slice(0, cfg.emb, d);
  rd_wte.xfer = cfg.emb;
  rd_wte.idx = RowSel::token_slot(token_slot);
  out.push_back(rd_wte);

  Instr rd_wpe;
  rd_wpe.op = Op::ReadDdr;
  rd_wpe.src1 = Operand::mem(Space::Ddr, "wpe");
  rd_wpe.dst = wpe_buf.slice(0, cfg.emb, d);
  rd_wpe.xfer = cfg.emb;
  rd_wpe.idx = RowSel::literal(position);
  out.push_back(rd_wpe);

  out.push_back(cg::compute(Op::Add, dst.slice(0, cfg.emb, d),
                            dst.slice(0, cfg.emb, d),
                            wpe_buf.slice(0, cfg.emb, d)));
  return out;
}

// LM head: logits against the transposed token-embedding matrix, the
// softmax retained for fidelity, and the greedy argmax on raw logits
// into the DDR token buffer.
inline std::vector<Instr> emit_lm_head(const GPTConfig& cfg, const cg::Loc& x,
                                       int out_slot, int d = 64) {
  std::vector<Instr> out;
  const Operand logits = Operand::mem(Space::Ddr, "logits", 0, cfg.vocab);
  const Operand probs = Operand::mem(Space::Ddr, "probs", 0, cfg.vocab);
  out.push_back(cg::matrix(Op::MM, logits, "lmw", Operand::none(),
                           x.slice(0, cfg.emb, d)));
  out.push_back(cg::compute(Op::ReduMax, Operand::sreg(cg::kMaxReg), logits));
  out.push_back(cg::compute(Op::Sub, probs, logits, Operand::sreg(cg::kMaxReg)));
  out.push_back(cg::compute(Op::Exp, probs, probs));
  out.push_back(cg::compute(Op::Accum, Operand::sreg(cg::kDenomReg), probs));
  out.push_back(cg::compute(Op::Recip, Operand::sreg(cg::kRecipReg),
                            Operand::sreg(cg::kDenomReg)));
  out.push_back(cg::compute(Op::Mul, probs, probs, Operand::sreg(cg::kRecipReg)));
  Instr am = cg::compute(Op::ReduMax, Operand::mem(Space::Ddr, "tok", out_slot, 1),
                         logits);
  am.argmax = true;
  out.push_back(am);
  // the chosen token also lands in the output staging buffer
  Instr wr;
  wr.op = Op::WriteDdr;
  wr.src1 = Operand::mem(Space::Ddr, "tok", out_slot, 1);
  wr.dst = Operand::mem(Space::Ddr, "tokout", out_slot, 1);
  wr.xfer = 1;
  out.push_back(wr);
  return out;
}

namespace cg {

// declare every weight/parameter/cache symbol for the shard
inline void declare_model_symbols(EmitCtx& E) {
  const GPTConfig& cfg = E.cfg;
  const ShardSpec& S = E.shard;
  const int64_t emb = cfg.emb, ffn = cfg.ffn_dim();
  E.sym(Space::Ddr, "wte", cfg.vocab, emb);
  E.sym(Space::Ddr, "wpe", cfg.max_seq, emb);
  E.sym(Space::Hbm, "lmw", emb, cfg.vocab);
  E.sym(Space::Ddr, "const", 1, 3);
  E.sym(Space::Ddr, "tok", cfg.max_seq, 1);
  E.sym(Space::Ddr, "tokout", cfg.max_seq, 1);
  E.sym(Space::Ddr, "logits", 1, cfg.vocab);
  E.sym(Space::Ddr, "probs", 1, cfg.vocab);
  for (int l = 0; l < cfg.n_layer; ++l) {
    E.sym(Space::Hbm, E.lt("wq", l), emb, S.qkv_cols.len());
    E.sym(Space::Hbm, E.lt("wk", l), emb, S.qkv_cols.len());
    E.sym(Space::Hbm, E.lt("wv", l), emb, S.qkv_cols.len());
    E.sym(Space::Hbm, E.lt("wa", l), emb, S.attn_cols.len());
    E.sym(Space::Hbm, E.lt("wf1", l), emb, S.ffn1_cols.len());
    E.sym(Space::Hbm, E.lt("wf2", l), ffn, S.ffn2_cols.len());
    E.sym(Space::Ddr, E.lt("bq", l), 1, emb);
    E.sym(Space::Ddr, E.lt("bk", l), 1, emb);
    E.sym(Space::Ddr, E.lt("bv", l), 1, emb);
    E.sym(Space::Ddr, E.lt("ba", l), 1, emb);
    E.sym(Space::Ddr, E.lt("bf1", l), 1, ffn);
    E.sym(Space::Ddr, E.lt("bf2", l), 1, emb);
    E.sym(Space::Ddr, E.lt("ln1g", l), 1, emb);
    E.sym(Space::Ddr, E.lt("ln1b", l), 1, emb);
    E.sym(Space::Ddr, E.lt("ln2g", l), 1, emb);
    E.sym(Space::Ddr, E.lt("ln2b", l), 1, emb);
    for (int h = S.head_lo; h < S.head_hi; ++h) {
      const std::string hs = "." + std::to_string(l) + "." + std::to_string(h);
      E.sym(Space::Hbm, "kc" + hs, cfg.max_seq, cfg.d_head);
      E.sym(Space::Hbm, "vc" + hs, cfg.max_seq, cfg.d_head);
    }
  }
}

// generation-pass value homes under the window plan
inline LayerLocs generation_locs(EmitCtx& E, int cache_rows) {
  const GPTConfig& cfg = E.cfg;
  const int64_t emb = cfg.emb;
  LayerLocs L;
  L.x = E.home(kWin0, "g_x", emb);
  L.ln1 = E.home(kWin1, "g_ln1", emb);
  L.q = E.home(kWin2, "g_q", E.shard.qkv_cols.len());
  const int64_t score_elems = int64_t(E.chunks(cfg.max_seq)) * E.d();
  L.score = E.fits_regs(score_elems)
                ? E.window(kWin1, int64_t(E.chunks(cache_rows)) * E.d())
                : E.scratch("g_score.0", 1, cfg.max_seq);
  L.attnf = E.home(kWin3, "g_attnf", emb);
  L.catf = E.home(kWin2, "g_catf", emb);
  L.ln2 = E.home(kWin1, "g_ln2", emb);
  L.f1f = E.home(kWin3, "g_f1f", cfg.ffn_dim());
  L.f2f = E.home(kWin1, "g_f2f", emb);
  L.vrow = E.scratch("g_vrow", 1, E.shard.qkv_cols.len());
  L.krow = E.scratch("g_krow", 1, E.shard.qkv_cols.len());
  if (!L.score.in_regs())
    for (int b = 0; b < kScalarBanks; ++b)
      E.scratch("g_score." + std::to_string(b), 1, cfg.max_seq);
  return L;
}

} // namespace cg

// One decoder layer in its generation-pass (single token) shape.
inline std::vector<Instr> emit_decoder_layer(const GPTConfig& cfg,
                                             const ShardSpec& shard, int layer,
                                             int cache_rows = 1,
                                             TileGeom geom = {}) {
  cfg.validate();
  if (layer < 0 || layer >= cfg.n_layer)
    throw Error("emit_decoder_layer: layer out of range");
  if (shard.head_lo < 0 || shard.head_hi > cfg.n_head ||
      shard.head_lo >= shard.head_hi)
    throw Error("emit_decoder_layer: shard head range invalid");
  Program scratch_prog;
  scratch_prog.meta = {shard.core_id, shard.n_cores, cfg.n_layer, 1, 1};
  cg::EmitCtx E{cfg, shard, geom, &scratch_prog};
  cg::declare_model_symbols(E);
  cg::LayerLocs L = cg::generation_locs(E, cache_rows);
  const size_t before = scratch_prog.instrs.size();
  cg::emit_layer_single(E, layer, L, cache_rows);
  return {scratch_prog.instrs.begin() + before, scratch_prog.instrs.end()};
}

// ---------------------------------------------------------------------------
// Full program: summarization over n_in tokens, LM head on the last
// input token, then n_out - 1 feedback generation passes.

inline Program emit_full_program(const GPTConfig& cfg, const ShardSpec& shard,
                                 int n_in, int n_out, TileGeom geom = {}) {
  cfg.validate();
  if (n_in < 1 || n_out < 1)
    throw Error("emit_full_program: need n_in >= 1 and n_out >= 1");
  if (n_in + n_out > cfg.max_seq)
    throw Error("emit_full_program: sequence length overflow");
  if (cfg.d_head % geom.d != 0 && geom.d % cfg.d_head != 0)
    throw Error("emit_full_program: head dimension incompatible with tile dimension");

  Program prog;
  prog.meta = {shard.core_id, shard.n_cores, cfg.n_layer, n_in, n_out};
  cg::EmitCtx E{cfg, shard, geom, &prog};
  cg::declare_model_symbols(E);

  const int d = E.d();
  const int64_t emb = cfg.emb, ffn = cfg.ffn_dim();
  const int64_t own_qkv = shard.qkv_cols.len();
  const int64_t own_emb = shard.attn_cols.len();
  const int64_t own_ffn = shard.ffn1_cols.len();
  const bool multi = shard.n_cores > 1;

  // prologue: constants into scalar registers
  E.emit(cg::compute(Op::Load, Operand::sreg(cg::kRecipEmbReg),
                     Operand::mem(Space::Ddr, "const", 0, 1)));
  E.emit(cg::compute(Op::Load, Operand::sreg(cg::kEpsReg),
                     Operand::mem(Space::Ddr, "const", 1, 1)));
  E.emit(cg::compute(Op::Load, Operand::sreg(cg::kQScaleReg),
                     Operand::mem(Space::Ddr, "const", 2, 1)));

  // ---- summarization stage: batched matrix sites, per-token the rest
  const cg::Loc act0 = E.scratch("actm.0", n_in, emb);
  const cg::Loc act1 = E.scratch("actm.1", n_in, emb);
  const cg::Loc wpebuf = E.scratch("wpebuf", 1, emb);
  const cg::Loc ln1m = E.scratch("ln1m", n_in, emb);
  const cg::Loc vm = E.scratch("vm", n_in, own_qkv);
  const cg::Loc km = E.scratch("km", n_in, own_qkv);
  const cg::Loc qm = E.scratch("qm", n_in, own_qkv);
  const cg::Loc scoreb = E.scratch("scoreb", 1, n_in);
  const cg::Loc attnfm = E.scratch("attnfm", n_in, emb);
  const cg::Loc catpm = multi ? E.scratch("catpm", n_in, own_emb) : cg::Loc{};
  const cg::Loc catm = E.scratch("catm", n_in, emb);
  const cg::Loc ln2m = E.scratch("ln2m", n_in, emb);
  const cg::Loc f1pm = multi ? E.scratch("f1pm", n_in, own_ffn) : cg::Loc{};
  const cg::Loc f1m = E.scratch("f1m", n_in, ffn);
  const cg::Loc f2pm = multi ? E.scratch("f2pm", n_in, own_emb) : cg::Loc{};
  const cg::Loc f2m = E.scratch("f2m", n_in, emb);

  for (int t = 0; t < n_in; ++t) {
    for (Instr& in :
         emit_embedding(cfg, {act0.slice(int64_t(t) * emb, emb, d), emb},
                        wpebuf, t, t, d))
      E.emit(std::move(in));
  }

  for (int l = 0; l < cfg.n_layer; ++l) {
    const cg::Loc& in_act = (l % 2 == 0) ? act0 : act1;
    const cg::Loc& out_act = (l % 2 == 0) ? act1 : act0;

    // A0: layer norm, one token at a time (banks rotate so the chains
    // of neighboring tokens overlap in the pipeline)
    for (int t = 0; t < n_in; ++t)
      cg::emit_layernorm(E, {ln1m.slice(int64_t(t) * emb, emb, d), emb},
                         {in_act.slice(int64_t(t) * emb, emb, d), emb},
                         E.lt("ln1g", l), E.lt("ln1b", l), t);

    // A1..A3: batched projections; Value first, then Key, then Query
    E.emit(cg::matrix(Op::Conv1D, vm.op, E.lt("wv", l),
                      E.bias_slice(E.lt("bv", l), shard.qkv_cols), ln1m.op,
                      n_in));
    for (int t = 0; t < n_in; ++t)
      for (int h = shard.head_lo; h < shard.head_hi; ++h) {
        Instr wk;
        wk.op = Op::WriteKv;
        wk.src1 = vm.slice(int64_t(t) * own_qkv +
                               int64_t(h - shard.head_lo) * cfg.d_head,
                           cfg.d_head, d);
        wk.dst = Operand::mem(Space::Hbm,
                              "vc." + std::to_string(l) + "." + std::to_string(h));
        wk.xfer = cfg.d_head;
        E.emit(wk);
      }
    E.emit(cg::matrix(Op::Conv1D, km.op, E.lt("wk", l),
                      E.bias_slice(E.lt("bk", l), shard.qkv_cols), ln1m.op,
                      n_in));
    for (int t = 0; t < n_in; ++t)
      for (int h = shard.head_lo; h < shard.head_hi; ++h) {
        Instr wk;
        wk.op = Op::WriteKv;
        wk.src1 = km.slice(int64_t(t) * own_qkv +
                               int64_t(h - shard.head_lo) * cfg.d_head,
                           cfg.d_head, d);
        wk.dst = Operand::mem(Space::Hbm,
                              "kc." + std::to_string(l) + "." + std::to_string(h));
        wk.xfer = cfg.d_head;
        E.emit(wk);
      }
    E.emit(cg::matrix(Op::Conv1D, qm.op, E.lt("wq", l),
                      E.bias_slice(E.lt("bq", l), shard.qkv_cols), ln1m.op,
                      n_in));
    E.emit(cg::compute(Op::Mul, qm.op, qm.op, Operand::sreg(cg::kQScaleReg)));

    // B: per-token attention over the fully formed K/V, masked beyond t
    for (int t = 0; t < n_in; ++t) {
      for (int h = shard.head_lo; h < shard.head_hi; ++h) {
        const int bank =
            (t * shard.owned_heads() + (h - shard.head_lo)) % cg::kScalarBanks;
        const Operand score = scoreb[size_t(bank)].slice(0, n_in, d);
        E.emit(cg::matrix(
            Op::MaskedMM, score,
            "kc." + std::to_string(l) + "." + std::to_string(h), Operand::none(),
            qm.slice(int64_t(t) * own_qkv + int64_t(h - shard.head_lo) * cfg.d_head,
                     cfg.d_head, d)));
        cg::emit_softmax(E, score, bank);
        E.emit(cg::matrix(Op::MM,
                          attnfm.slice(int64_t(t) * emb + int64_t(h) * cfg.d_head,
                                       cfg.d_head, d),
                          "vc." + std::to_string(l) + "." + std::to_string(h),
                          Operand::none(), score));
      }
      cg::emit_sync(E,
                    attnfm.slice(int64_t(t) * emb + shard.qkv_cols.lo, own_qkv, d),
                    attnfm.slice(int64_t(t) * emb, emb, d)); // sync 1
    }

    // C: attention projection, batched
    E.emit(cg::matrix(Op::Conv1D, multi ? catpm.op : catm.op, E.lt("wa", l),
                      E.bias_slice(E.lt("ba", l), shard.attn_cols), attnfm.op,
                      n_in));

    // D: per-token gather, residual, layer norm
    for (int t = 0; t < n_in; ++t) {
      cg::emit_sync(E, catpm.op.tag.empty()
                           ? Operand()
                           : catpm.slice(int64_t(t) * own_emb, own_emb, d),
                    catm.slice(int64_t(t) * emb, emb, d)); // sync 2
      E.emit(cg::compute(Op::Add, catm.slice(int64_t(t) * emb, emb, d),
                         catm.slice(int64_t(t) * emb, emb, d),
                         in_act.slice(int64_t(t) * emb, emb, d)));
      cg::emit_layernorm(E, {ln2m.slice(int64_t(t) * emb, emb, d), emb},
                         {catm.slice(int64_t(t) * emb, emb, d), emb},
                         E.lt("ln2g", l), E.lt("ln2b", l));
    }

    // E: first FFN matrix + activation, batched
    E.emit(cg::matrix(Op::Conv1D, multi ? f1pm.op : f1m.op, E.lt("wf1", l),
                      E.bias_slice(E.lt("bf1", l), shard.ffn1_cols), ln2m.op,
                      n_in));
    E.emit(cg::compute(Op::Gelu, multi ? f1pm.op : f1m.op,
                       multi ? f1pm.op : f1m.op));

    // F: gather ffn1 per token
    if (multi)
      for (int t = 0; t < n_in; ++t)
        cg::emit_sync(E, f1pm.slice(int64_t(t) * own_ffn, own_ffn, d),
                      f1m.slice(int64_t(t) * ffn, ffn, d)); // sync 3

    // G: second FFN matrix, batched
    E.emit(cg::matrix(Op::Conv1D, multi ? f2pm.op : f2m.op, E.lt("wf2", l),
                      E.bias_slice(E.lt("bf2", l), shard.ffn2_cols), f1m.op,
                      n_in));

    // H: gather ffn2 and close the residual per token
    for (int t = 0; t < n_in; ++t) {
      if (multi)
        cg::emit_sync(E, f2pm.slice(int64_t(t) * own_emb, own_emb, d),
                      f2m.slice(int64_t(t) * emb, emb, d)); // sync 4
      E.emit(cg::compute(Op::Add, out_act.slice(int64_t(t) * emb, emb, d),
                         f2m.slice(int64_t(t) * emb, emb, d),
                         catm.slice(int64_t(t) * emb, emb, d)));
    }
  }

  // LM head on the last input token's activation
  const cg::Loc& final_act = (cfg.n_layer % 2 == 0) ? act0 : act1;
  for (Instr& in : emit_lm_head(
           cfg, {final_act.slice(int64_t(n_in - 1) * emb, emb, d), emb}, n_in, d))
    E.emit(std::move(in));

  // ---- generation stage: single-token passes with token feedback
  for (int g = 1; g < n_out; ++g) {
    const int slot = n_in + g - 1; // token produced by the previous pass
    const int cache_rows = n_in + g;
    cg::LayerLocs L = cg::generation_locs(E, cache_rows);
    for (Instr& in : emit_embedding(cfg, L.x, wpebuf, slot, slot, d))
      E.emit(std::move(in));
    for (int l = 0; l < cfg.n_layer; ++l)
      cg::emit_layer_single(E, l, L, cache_rows);
    for (Instr& in : emit_lm_head(cfg, L.x, n_in + g, d)) E.emit(std::move(in));
  }
  return prog;
}

} // namespace tgsim

#pragma once
#define TGSIM_CLUSTER_HPP_INCLUDED

// Appliance orchestration: per-core program execution over sharded
// weight stores, ring-synchronized at the emitted barrier points, with
// cycle accounting on four engine timelines per core (matrix, vector,
// dma, router).
//
// Timing model: every instruction has an occupancy (cycles its engine
// is busy) and a fill (pipeline latency until its results are ready).
// An instruction starts at max(engine free, source operands ready);
// its engine is busy for the occupancy, dependents wait occupancy +
// fill. Independent work therefore overlaps to occupancy while
// dependency chains pay the fills, which is how chained sequences
// "operate with minimal stalling". Cores run logically in lockstep by
// instruction index (the emitted programs are SPMD-symmetric) and
// interact only at ring syncs, so execution is deterministic
// regardless of host threading.

#include <array>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgsim/codegen.hpp"
#include "tgsim/config.hpp"
#include "tgsim/core.hpp"
#include "tgsim/isa.hpp"
#include "tgsim/memory.hpp"
#include "tgsim/network.hpp"
#include "tgsim/weights.hpp"

namespace tgsim {

struct ClusterConfig {
  int n_cores = 1;
  TileGeom geom;
  RingLink link;
  GPTConfig model;
  LatencyTable lat;
  int64_t ddr_bytes_per_cycle = 190; // 38 GB/s at 200 MHz
  double clock_hz = 200e6;

  void validate() const {
    model.validate();
    geom.check();
    link.check();
    lat.check();
    if (n_cores != 1 && n_cores != 2 && n_cores != 4 && n_cores != 8)
      throw Error("cluster: n_cores must be 1, 2, 4 or 8");
    if (model.n_head % n_cores != 0)
      throw Error("cluster: n_cores must divide n_head");
    if (model.d_head % geom.d != 0)
      throw Error("cluster: tile dimension must divide the head dimension");
    if (ddr_bytes_per_cycle <= 0)
      throw Error("cluster: ddr bandwidth must be positive");
  }

  uint64_t hash() const {
    std::ostringstream os;
    os << n_cores << "|" << geom.d << "," << geom.l << "," << geom.bw_data
       << "|" << link.bits_per_cycle << "," << link.efficiency << ","
       << link.hop_latency << "|" << model.emb << "," << model.n_head << ","
       << model.d_head << "," << model.n_layer << "," << model.vocab << ","
       << model.ffn_mult << "," << model.max_seq << "|" << lat.mul << ","
       << lat.add << "," << lat.exp << "|" << ddr_bytes_per_cycle;
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : os.str()) {
      h ^= uint64_t(uint8_t(c));
      h *= 0x100000001b3ull;
    }
    return h;
  }
};

enum class StatCat {
  Embedding, Qkv, Attention, Ffn, LayernormResidual, Sync, LmHead, DmaOther,
};
constexpr int kNumStatCats = 8;

inline const char* stat_cat_name(StatCat c) {
  switch (c) {
    case StatCat::Embedding: return "embedding";
    case StatCat::Qkv: return "qkv";
    case StatCat::Attention: return "attention";
    case StatCat::Ffn: return "ffn";
    case StatCat::LayernormResidual: return "layernorm_residual";
    case StatCat::Sync: return "sync";
    case StatCat::LmHead: return "lm_head";
    case StatCat::DmaOther: return "dma_other";
  }
  return "?";
}

struct RunStats {
  std::array<int64_t, kNumStatCats> cycles{};
  int64_t total_cycles = 0;
  int64_t tokens = 0;
  double clock_hz = 200e6;
  int64_t hazard_violations = 0;       // stale reads; must stay zero
  int64_t value_transpose_stalls = 0;  // waits on the transposed Value write
  int64_t inf_events = 0;              // reciprocal family overflow

  int64_t cat(StatCat c) const { return cycles[size_t(c)]; }
  double wall_seconds() const { return double(total_cycles) / clock_hz; }
  double tokens_per_sec() const {
    const double s = wall_seconds();
    return s > 0 ? double(tokens) / s : 0.0;
  }
  double sync_share() const {
    return total_cycles ? double(cat(StatCat::Sync)) / double(total_cycles) : 0;
  }

  static std::string csv_header() {
    std::string h = "config_hash,n_in,n_out,n_cores,total_cycles";
    for (int c = 0; c < kNumStatCats; ++c)
      h += std::string(",cyc_") + stat_cat_name(StatCat(c));
    h += ",tokens_per_sec_modeled";
    return h;
  }
  std::string csv_row(uint64_t cfg_hash, int n_in, int n_out, int n_cores) const {
    std::ostringstream os;
    os << std::hex << cfg_hash << std::dec << "," << n_in << "," << n_out << ","
       << n_cores << "," << total_cycles;
    for (int c = 0; c < kNumStatCats; ++c) os << "," << cycles[size_t(c)];
    os << "," << tokens_per_sec();
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Store construction from dense weights

inline WeightStore build_weight_store(const ModelWeights& w,
                                      const ShardSpec& shard,
                                      const TileGeom& geom) {
  WeightStore hbm;
  auto shard_cols = [&](const TensorF16& dense, const ShardSpec::Range& r) {
    TensorF16 s(dense.rows, int(r.len()));
    for (int i = 0; i < dense.rows; ++i)
      for (int64_t j = r.lo; j < r.hi; ++j)
        s.at(i, int(j - r.lo)) = dense.at(i, int(j));
    return s;
  };
  for (int l = 0; l < w.cfg.n_layer; ++l) {
    const LayerWeights& L = w.layers[size_t(l)];
    const std::string s = "." + std::to_string(l);
    hbm.put("wq" + s, tile_matrix(shard_cols(L.wq, shard.qkv_cols), geom,
                                  shard.qkv_cols.lo));
    hbm.put("wk" + s, tile_matrix(shard_cols(L.wk, shard.qkv_cols), geom,
                                  shard.qkv_cols.lo));
    hbm.put("wv" + s, tile_matrix(shard_cols(L.wv, shard.qkv_cols), geom,
                                  shard.qkv_cols.lo));
    hbm.put("wa" + s, tile_matrix(shard_cols(L.wa, shard.attn_cols), geom,
                                  shard.attn_cols.lo));
    hbm.put("wf1" + s, tile_matrix(shard_cols(L.wf1, shard.ffn1_cols), geom,
                                   shard.ffn1_cols.lo));
    hbm.put("wf2" + s, tile_matrix(shard_cols(L.wf2, shard.ffn2_cols), geom,
                                   shard.ffn2_cols.lo));
  }
  // LM head matrix: the transposed token embedding, kept whole per core
  TensorF16 lmw(w.cfg.emb, w.cfg.vocab);
  for (int v = 0; v < w.cfg.vocab; ++v)
    for (int e = 0; e < w.cfg.emb; ++e) lmw.at(e, v) = w.wte.at(v, e);
  hbm.put("lmw", tile_matrix(lmw, geom, 0));
  return hbm;
}

inline DdrStore build_ddr_store(const ModelWeights& w) {
  DdrStore ddr;
  ddr.put("wte", w.wte);
  ddr.put("wpe", w.wpe);
  TensorF16 consts(1, 3);
  consts.at(0, 0) = f16(1.0 / double(w.cfg.emb));
  consts.at(0, 1) = f16(1e-5);
  consts.at(0, 2) = f16(1.0 / std::sqrt(double(w.cfg.d_head)));
  ddr.put("const", consts);
  for (int l = 0; l < w.cfg.n_layer; ++l) {
    const LayerWeights& L = w.layers[size_t(l)];
    const std::string s = "." + std::to_string(l);
    ddr.put("bq" + s, L.bq);
    ddr.put("bk" + s, L.bk);
    ddr.put("bv" + s, L.bv);
    ddr.put("ba" + s, L.ba);
    ddr.put("bf1" + s, L.bf1);
    ddr.put("bf2" + s, L.bf2);
    ddr.put("ln1g" + s, L.ln1g);
    ddr.put("ln1b" + s, L.ln1b);
    ddr.put("ln2g" + s, L.ln2g);
    ddr.put("ln2b" + s, L.ln2b);
  }
  return ddr;
}

// ---------------------------------------------------------------------------
// Optional execution trace for equivalence tests

struct PassTrace {
  int position = 0;                       // token position of the pass
  std::vector<Fp16> x_in;                 // embedding vector entering layer 0
  std::vector<std::vector<Fp16>> layer_out; // per decoder layer
};

struct RunTrace {
  std::map<int, PassTrace> passes; // keyed by token position
};

// ---------------------------------------------------------------------------
// Core executor

namespace exec_detail {

// readiness intervals over one memory symbol
class MemTimeline {
 public:
  int64_t query(int64_t off, int64_t len) const {
    int64_t t = 0;
    for (const auto& iv : ivs_)
      if (iv.off < off + len && off < iv.end) t = std::max(t, iv.time);
    return t;
  }
  void update(int64_t off, int64_t len, int64_t time) {
    std::vector<Interval> keep;
    for (const auto& iv : ivs_) {
      if (iv.end <= off || iv.off >= off + len) {
        keep.push_back(iv);
        continue;
      }
      if (iv.off < off) keep.push_back({iv.off, off, iv.time});
      if (iv.end > off + len) keep.push_back({off + len, iv.end, iv.time});
    }
    keep.push_back({off, off + len, time});
    ivs_ = std::move(keep);
  }

 private:
  struct Interval {
    int64_t off, end, time;
  };
  std::vector<Interval> ivs_;
};

enum class Engine { Mfu, Vfu, Dma, Router };

inline Engine engine_of(Op op) {
  switch (op) {
    case Op::Conv1D: case Op::MM: case Op::MaskedMM: case Op::Gelu:
    case Op::ReduMax:
      return Engine::Mfu;
    case Op::ReadWeights: case Op::ReadDdr: case Op::WriteKv: case Op::WriteDdr:
      return Engine::Dma;
    case Op::Send: case Op::Recv:
      return Engine::Router;
    default:
      return Engine::Vfu;
  }
}

} // namespace exec_detail

class CoreExecutor {
 public:
  CoreExecutor(const ClusterConfig& cluster, const Program& prog,
               const WeightStore* hbm, const DdrStore* ddr)
      : cfg_(cluster), prog_(prog), hbm_(hbm), ddr_(ddr),
        rf_(cluster.geom.d, 64, 64),
        kv_(cluster.model.n_layer, cluster.model.n_head, cluster.model.d_head,
            cluster.model.max_seq),
        tokens_(size_t(cluster.model.max_seq), -1),
        tokens_out_(size_t(cluster.model.max_seq), -1) {
    for (const SymbolInfo& s : prog.symbols) {
      if (s.space != Space::Ddr) continue;
      if (ddr_->has(s.tag) || s.tag == "tok" || s.tag == "tokout") continue;
      scratch_[s.tag].assign(size_t(s.elems()), Fp16());
    }
  }

  void preload_tokens(const TokenSeq& input) {
    for (size_t i = 0; i < input.ids.size(); ++i) tokens_[i] = input.ids[i];
  }

  int32_t token_at(int slot) const { return tokens_[size_t(slot)]; }
  const KVCache& kv() const { return kv_; }
  int64_t completion() const { return completion_; }
  const std::array<int64_t, kNumStatCats>& cat_cycles() const { return cat_; }
  int64_t hazard_violations() const { return hazards_; }
  int64_t value_transpose_stalls() const { return vt_stalls_; }
  int64_t inf_events() const { return events_.inf_results; }
  RunTrace* trace = nullptr;

  // ---- sync barrier support (driven by the cluster orchestrator)
  struct SendState {
    std::vector<Fp16> slice;
    int64_t wire_time = 0;
  };

  SendState exec_send(const Instr& in) {
    const auto src = read_span(in.src1);
    const int64_t start =
        std::max({router_free_, dma_free_if_mem(in.src1), ready_of(in.src1)});
    SendState st;
    st.slice.assign(src.begin(), src.end());
    st.wire_time = start;
    router_free_ = start;
    pending_send_start_ = start;
    return st;
  }

  void exec_recv(const Instr& in, const std::vector<Fp16>& gathered,
                 int64_t sync_end) {
    auto dst = write_span(in.dst);
    if (dst.size() != gathered.size())
      throw Error("recv: gathered size does not match destination");
    std::copy(gathered.begin(), gathered.end(), dst.begin());
    router_free_ = sync_end;
    mark_written(in.dst, sync_end);
    advance(sync_end, StatCat::Sync);
  }

  // ---- main dispatch for non-router instructions
  void exec(const Instr& in) {
    switch (in.op) {
      case Op::Send:
      case Op::Recv:
        throw Error("router instructions are orchestrated at the cluster level");
      case Op::Load:
      case Op::Store:
        exec_move(in);
        break;
      case Op::Add: case Op::Sub: case Op::Mul: case Op::Exp:
        exec_elementwise(in);
        break;
      case Op::Accum:
        exec_accum(in);
        break;
      case Op::Recip: case Op::RecipSqrt:
        exec_scalar(in);
        break;
      case Op::Gelu:
        exec_gelu_op(in);
        break;
      case Op::ReduMax:
        exec_redu(in);
        break;
      case Op::Conv1D: case Op::MM:
        exec_matrix(in);
        break;
      case Op::MaskedMM:
        exec_masked(in);
        break;
      case Op::ReadDdr:
        exec_read_ddr(in);
        break;
      case Op::WriteDdr:
        exec_write_ddr(in);
        break;
      case Op::WriteKv:
        exec_write_kv(in);
        break;
      case Op::ReadWeights:
        exec_read_weights(in);
        break;
    }
  }

 private:
  // ---------------- operand resolution
  bool is_param(const std::string& tag) const { return ddr_->has(tag); }

  std::span<const Fp16> read_span(const Operand& o) {
    switch (o.space) {
      case Space::VReg:
        return rf_.vwin(o.index, o.count);
      case Space::SReg:
        return {&rf_.s[size_t(o.index)], 1};
      case Space::Ddr: {
        if (is_param(o.tag)) {
          const TensorF16& t = ddr_->get(o.tag);
          const int64_t len = o.len ? o.len : int64_t(t.data.size());
          return {t.data.data() + o.off, size_t(len)};
        }
        auto it = scratch_.find(o.tag);
        if (it == scratch_.end())
          throw Error("unknown ddr symbol '" + o.tag + "'");
        const int64_t len = o.len ? o.len : int64_t(it->second.size());
        return {it->second.data() + o.off, size_t(len)};
      }
      default:
        throw Error("operand is not directly readable");
    }
  }

  std::span<Fp16> write_span(const Operand& o) {
    switch (o.space) {
      case Space::VReg:
        return rf_.vwin(o.index, o.count);
      case Space::SReg:
        return {&rf_.s[size_t(o.index)], 1};
      case Space::Ddr: {
        if (is_param(o.tag))
          throw Error("cannot write model parameter '" + o.tag + "'");
        auto it = scratch_.find(o.tag);
        if (it == scratch_.end())
          throw Error("unknown ddr symbol '" + o.tag + "'");
        const int64_t len = o.len ? o.len : int64_t(it->second.size());
        return {it->second.data() + o.off, size_t(len)};
      }
      default:
        throw Error("operand is not writable");
    }
  }

  // ---------------- readiness tracking
  int64_t ready_of(const Operand& o) {
    switch (o.space) {
      case Space::VReg: {
        int64_t t = 0;
        for (int i = 0; i < o.count; ++i)
          t = std::max(t, vreg_ready_[size_t(o.index + i)]);
        return t;
      }
      case Space::SReg:
        return sreg_ready_[size_t(o.index)];
      case Space::Hbm:
      case Space::Ddr: {
        auto it = mem_ready_.find(o.tag);
        if (it == mem_ready_.end()) return 0;
        const int64_t len = o.len ? o.len : int64_t(1) << 60;
        return it->second.query(o.off, len);
      }
      default:
        return 0;
    }
  }

  void mark_written(const Operand& o, int64_t time) {
    switch (o.space) {
      case Space::VReg:
        for (int i = 0; i < o.count; ++i)
          vreg_ready_[size_t(o.index + i)] = time;
        break;
      case Space::SReg:
        sreg_ready_[size_t(o.index)] = time;
        break;
      case Space::Hbm:
      case Space::Ddr: {
        const int64_t len = o.len ? o.len : int64_t(1) << 60;
        mem_ready_[o.tag].update(o.off, len, time);
        break;
      }
      default:
        break;
    }
  }

  int64_t dma_free_if_mem(const Operand& o) const {
    return o.is_mem() ? dma_free_ : 0;
  }

  int64_t& engine_free(exec_detail::Engine e) {
    switch (e) {
      case exec_detail::Engine::Mfu: return mfu_free_;
      case exec_detail::Engine::Vfu: return vfu_free_;
      case exec_detail::Engine::Dma: return dma_free_;
      default: return router_free_;
    }
  }

  // timing skeleton shared by all compute paths
  struct Timing {
    int64_t start = 0, end_occ = 0, ready = 0;
  };

  Timing schedule(const Instr& in, exec_detail::Engine eng, int64_t occupancy,
                  int64_t fill, int64_t ddr_bytes) {
    int64_t start = engine_free(eng);
    auto consider = [&](const Operand& o) {
      if (o.is_none() || o.space == Space::Peer) return;
      const int64_t r = ready_of(o);
      if (r > start) start = r;
    };
    consider(in.src1);
    consider(in.src2);
    consider(in.x);
    consider(in.dst); // write-after-write / write-after-read safety
    if (ddr_bytes > 0 && eng != exec_detail::Engine::Dma)
      start = std::max(start, dma_free_);

    // stale-read assertion: operands must be ready at issue
    for (const Operand* o : {&in.src1, &in.src2, &in.x})
      if (!o->is_none() && o->space != Space::Peer && ready_of(*o) > start)
        ++hazards_;

    // value-transpose visibility: stalls waiting on the written cache
    if ((in.op == Op::MM || in.op == Op::MaskedMM) && in.src1.is_mem()) {
      const int64_t r = ready_of(in.src1);
      if (r > engine_free(eng) && r >= start && r > 0 &&
          in.src1.tag.rfind("vc.", 0) == 0)
        ++vt_stalls_;
    }

    Timing t;
    t.start = start;
    t.end_occ = start + occupancy;
    t.ready = t.end_occ + fill;
    engine_free(eng) = t.end_occ;
    if (ddr_bytes > 0) {
      const int64_t dma_cycles = ddr_cycles(ddr_bytes, cfg_.ddr_bytes_per_cycle);
      dma_free_ = std::max(dma_free_, start) + dma_cycles;
      t.ready = std::max(t.ready, start + dma_cycles);
    }
    mark_written(in.dst, t.ready);
    return t;
  }

  void advance(int64_t to, StatCat cat) {
    if (to > completion_) {
      cat_[size_t(cat)] += to - completion_;
      completion_ = to;
    }
  }

  int chunks_of(const Operand& o) const {
    if (o.space == Space::VReg) return o.count;
    if (o.space == Space::SReg) return 1;
    return int(ceil_div(o.len ? o.len : 1, cfg_.geom.d));
  }

  int64_t mem_bytes(const Operand& o) const {
    if (!o.is_mem() || o.space != Space::Ddr) return 0;
    if (o.len) return o.len * 2;
    auto it = scratch_.find(o.tag);
    if (it != scratch_.end()) return int64_t(it->second.size()) * 2;
    return is_param(o.tag) ? int64_t(ddr_->get(o.tag).data.size()) * 2 : 0;
  }

  // ---------------- category resolution
  StatCat category(const Instr& in) {
    auto tag_is = [&](const Operand& o, const char* pfx) {
      return o.is_mem() && o.tag.rfind(pfx, 0) == 0;
    };
    if (kind_of(in.op) == InstrKind::Router) return StatCat::Sync;
    if (tag_is(in.src1, "lmw") || tag_is(in.src1, "logits") ||
        tag_is(in.src1, "probs") || tag_is(in.dst, "logits") ||
        tag_is(in.dst, "probs") || tag_is(in.dst, "tok") ||
        tag_is(in.dst, "tokout"))
      return StatCat::LmHead;
    if (tag_is(in.src1, "wte") || tag_is(in.src1, "wpe") ||
        tag_is(in.src2, "wpebuf"))
      return StatCat::Embedding;
    if (in.op == Op::WriteKv || tag_is(in.src1, "wq") || tag_is(in.src1, "wk") ||
        tag_is(in.src1, "wv"))
      return StatCat::Qkv;
    if (tag_is(in.src1, "wa") || tag_is(in.src1, "kc.") ||
        tag_is(in.src1, "vc."))
      return StatCat::Attention;
    if (in.op == Op::Gelu || tag_is(in.src1, "wf")) return StatCat::Ffn;
    if (in.op == Op::MaskedMM) return StatCat::Attention;
    if (softmax_depth_ > 0) return StatCat::Attention;
    if (kind_of(in.op) == InstrKind::Dma) return StatCat::DmaOther;
    if (in.op == Op::Load || in.op == Op::Store) return StatCat::DmaOther;
    return StatCat::LayernormResidual;
  }

  // ---------------- instruction implementations
  void exec_move(const Instr& in) {
    const auto src = read_span(in.src1);
    auto dst = write_span(in.dst);
    if (src.size() != dst.size()) throw Error("load/store width mismatch");
    const int64_t bytes = mem_bytes(in.src1) + mem_bytes(in.dst);
    const Timing t = schedule(in, exec_detail::Engine::Vfu,
                              int64_t(chunks_of(in.dst)) * cfg_.lat.load_store,
                              0, bytes);
    std::copy(src.begin(), src.end(), dst.begin());
    advance(t.ready, category(in));
  }

  void exec_elementwise(const Instr& in) {
    const auto a = read_span(in.src1);
    auto dst = write_span(in.dst);
    VfuOp op;
    int64_t fill;
    switch (in.op) {
      case Op::Add: op = VfuOp::Add; fill = cfg_.lat.add; break;
      case Op::Sub: op = VfuOp::Sub; fill = cfg_.lat.sub; break;
      case Op::Mul: op = VfuOp::Mul; fill = cfg_.lat.mul; break;
      default: op = VfuOp::Exp; fill = cfg_.lat.exp; break;
    }
    const int64_t bytes =
        mem_bytes(in.src1) + mem_bytes(in.src2) + mem_bytes(in.dst);
    const Timing t = schedule(in, exec_detail::Engine::Vfu,
                              chunks_of(in.dst), fill, bytes);
    if (op == VfuOp::Exp) {
      exec_vfu(op, a, {}, dst);
    } else {
      const auto b = read_span(in.src2);
      exec_vfu(op, a, b, dst);
    }
    if (softmax_depth_ > 0 && in.op == Op::Mul) --softmax_depth_;
    advance(t.ready, category(in));
  }

  void exec_accum(const Instr& in) {
    const auto src = read_span(in.src1);
    auto dst = write_span(in.dst);
    const int chunks = chunks_of(in.src1);
    const int64_t fill =
        int64_t(cfg_.lat.add) * LatencyTable::tree_depth(cfg_.geom.d) +
        int64_t(cfg_.lat.add) * (chunks - 1);
    const Timing t = schedule(in, exec_detail::Engine::Vfu, chunks, fill,
                              mem_bytes(in.src1));
    dst[0] = accum_wide(src, cfg_.geom.d);
    advance(t.ready, category(in));
  }

  void exec_scalar(const Instr& in) {
    const auto src = read_span(in.src1);
    auto dst = write_span(in.dst);
    const int64_t fill =
        in.op == Op::Recip ? cfg_.lat.recip : cfg_.lat.recip_sqrt;
    const Timing t = schedule(in, exec_detail::Engine::Vfu, 1, fill, 0);
    dst[0] = in.op == Op::Recip ? exec_recip(src[0], &events_)
                                : exec_recip_sqrt(src[0], &events_);
    advance(t.ready, category(in));
  }

  void exec_gelu_op(const Instr& in) {
    const auto src = read_span(in.src1);
    auto dst = write_span(in.dst);
    const Timing t = schedule(in, exec_detail::Engine::Mfu, chunks_of(in.dst),
                              cfg_.lat.gelu,
                              mem_bytes(in.src1) + mem_bytes(in.dst));
    exec_gelu(src, dst);
    advance(t.ready, category(in));
  }

  void exec_redu(const Instr& in) {
    const auto src = read_span(in.src1);
    const int chunks = chunks_of(in.src1);
    const int64_t fill =
        int64_t(cfg_.lat.cmp_stage) * LatencyTable::tree_depth(cfg_.geom.d) +
        int64_t(cfg_.lat.cmp_stage) * (chunks - 1);
    const Timing t = schedule(in, exec_detail::Engine::Mfu, chunks, fill,
                              mem_bytes(in.src1));
    const ReduMaxResult r = exec_redu_max(src);
    if (in.argmax) {
      if (in.dst.space != Space::Ddr || in.dst.tag.rfind("tok", 0) != 0)
        throw Error("argmax destination must be a token buffer slot");
      tokens_[size_t(in.dst.off)] = r.argmax;
      mem_ready_["tok"].update(in.dst.off, 1, t.ready);
    } else {
      auto dst = write_span(in.dst);
      dst[0] = r.max;
    }
    advance(t.ready, category(in));
  }

  const TiledMatrix& weights_of(const Instr& in) {
    if (!hbm_->has(in.src1.tag))
      throw Error("matrix operand '" + in.src1.tag + "' not resident in hbm");
    return hbm_->get(in.src1.tag);
  }

  void exec_matrix(const Instr& in) {
    // attention Score x Value reads the transposed cache
    if (in.src1.tag.rfind("vc.", 0) == 0) {
      int layer, head;
      parse_cache_tag(in.src1.tag, &layer, &head);
      const int t_rows = kv_.value_cols(layer, head);
      const auto score_full = read_span(in.x);
      if (int64_t(score_full.size()) < t_rows)
        throw Error("attend: score operand shorter than cached tokens");
      const UnitCost c =
          matrix_cost_hbm(t_rows, cfg_.model.d_head, cfg_.geom, cfg_.lat);
      const Timing t = schedule(in, exec_detail::Engine::Mfu, c.occupancy,
                                c.fill, mem_bytes(in.x) + mem_bytes(in.dst));
      const auto y =
          exec_attend(score_full.subspan(0, size_t(t_rows)), kv_,
                      layer, head, cfg_.geom.d);
      auto dst = write_span(in.dst);
      std::copy(y.begin(), y.end(), dst.begin());
      advance(t.ready, StatCat::Attention);
      return;
    }

    const TiledMatrix& A = weights_of(in);
    const auto x = read_span(in.x);
    auto dst = write_span(in.dst);
    const UnitCost c = matrix_cost_hbm(A.rows, A.cols, cfg_.geom, cfg_.lat);
    const int64_t bytes =
        mem_bytes(in.x) + mem_bytes(in.dst) + mem_bytes(in.src2);
    const Timing t =
        schedule(in, exec_detail::Engine::Mfu, c.occupancy, c.fill, bytes);
    if (in.op == Op::Conv1D && !in.src2.is_none()) {
      const auto bias = read_span(in.src2);
      exec_conv1d(A, x, in.rows, bias, dst);
    } else {
      exec_conv1d(A, x, in.rows, {}, dst);
    }
    advance(t.ready, category(in));
  }

  void exec_masked(const Instr& in) {
    int layer, head;
    parse_cache_tag(in.src1.tag, &layer, &head);
    const auto q = read_span(in.x);
    auto dst = write_span(in.dst);
    const int t_rows = kv_.key_rows(layer, head);

    // the controller supplies the masking token index: summarization
    // rows derive it from the query matrix row, generation uses the
    // newest cache row
    int token_idx = t_rows - 1;
    if (in.x.is_mem()) {
      const SymbolInfo* sym = prog_.find_symbol(in.x.tag);
      if (sym && sym->rows > 1) token_idx = int(in.x.off / sym->cols);
    }

    const UnitCost c =
        matrix_cost_hbm(cfg_.model.d_head, t_rows, cfg_.geom, cfg_.lat);
    const Timing t = schedule(in, exec_detail::Engine::Mfu, c.occupancy, c.fill,
                              mem_bytes(in.x) + mem_bytes(in.dst));
    const MaskedRow r =
        exec_maskedmm(q.subspan(0, size_t(cfg_.model.d_head)), kv_, layer, head,
                      token_idx);
    if (int64_t(dst.size()) < t_rows)
      throw Error("maskedmm: destination shorter than cached tokens");
    std::copy(r.row.begin(), r.row.end(), dst.begin());
    // pad lanes beyond the row read as masked-out positions
    for (size_t i = size_t(t_rows); i < dst.size(); ++i)
      dst[i] = Fp16::from_bits(Fp16::kLowestFinite);
    softmax_depth_ = 6; // the following softmax expansion is attention work
    advance(t.ready, StatCat::Attention);
  }

  void exec_read_ddr(const Instr& in) {
    auto dst = write_span(in.dst);
    std::span<const Fp16> src;
    if (in.idx.kind != RowSel::Kind::None) {
      const TensorF16& t = ddr_->get(in.src1.tag);
      int row;
      if (in.idx.kind == RowSel::Kind::Literal) {
        row = in.idx.value;
      } else {
        row = tokens_[size_t(in.idx.value)];
        if (row < 0)
          throw Error("token slot " + std::to_string(in.idx.value) +
                      " read before it was produced");
      }
      if (row >= t.rows)
        throw Error("row index out of range for '" + in.src1.tag + "'");
      src = {t.data.data() + size_t(row) * t.cols, size_t(t.cols)};
    } else {
      src = read_span(in.src1);
    }
    if (src.size() != dst.size()) throw Error("read_ddr width mismatch");
    const Timing t = schedule(in, exec_detail::Engine::Dma,
                              ddr_cycles(in.xfer * 2, cfg_.ddr_bytes_per_cycle),
                              0, 0);
    std::copy(src.begin(), src.end(), dst.begin());
    advance(t.ready, category(in));

    if (trace && in.src1.tag == "wpe" &&
        in.idx.kind == RowSel::Kind::Literal)
      pending_pass_position_ = in.idx.value;
  }

  void exec_write_ddr(const Instr& in) {
    // token staging writes move ids, everything else moves elements
    if (in.src1.tag == "tok" && in.dst.tag == "tokout") {
      const Timing t = schedule(in, exec_detail::Engine::Dma,
                                ddr_cycles(in.xfer * 2, cfg_.ddr_bytes_per_cycle),
                                0, 0);
      tokens_out_[size_t(in.dst.off)] = tokens_[size_t(in.src1.off)];
      advance(t.ready, category(in));
      return;
    }
    const auto src = read_span(in.src1);
    auto dst = write_span(in.dst);
    if (src.size() != dst.size()) throw Error("write_ddr width mismatch");
    const Timing t = schedule(in, exec_detail::Engine::Dma,
                              ddr_cycles(in.xfer * 2, cfg_.ddr_bytes_per_cycle),
                              0, 0);
    std::copy(src.begin(), src.end(), dst.begin());
    advance(t.ready, category(in));
  }

  void exec_write_kv(const Instr& in) {
    int layer, head;
    parse_cache_tag(in.dst.tag, &layer, &head);
    const auto src = read_span(in.src1);
    if (int64_t(src.size()) != cfg_.model.d_head)
      throw Error("write_kv expects one head row");
    const Timing t = schedule(
        in, exec_detail::Engine::Dma,
        std::max<int64_t>(1, ceil_div(in.xfer, cfg_.geom.elems_per_beat())), 0,
        mem_bytes(in.src1));
    std::vector<Fp16> row(src.begin(), src.end());
    if (in.dst.tag[0] == 'v')
      dma_write_value_transposed(kv_, layer, head, {row});
    else
      kv_.append_key(layer, head, row);
    mem_ready_[in.dst.tag].update(0, int64_t(1) << 60, t.ready);
    advance(t.ready, StatCat::Qkv);
  }

  void exec_read_weights(const Instr& in) {
    const TiledMatrix& A = weights_of(in);
    const Timing t =
        schedule(in, exec_detail::Engine::Dma, A.beats(), 0, 0);
    advance(t.ready, StatCat::DmaOther);
  }

  static void parse_cache_tag(const std::string& tag, int* layer, int* head) {
    // "kc.<layer>.<head>" / "vc.<layer>.<head>"
    const size_t p1 = tag.find('.');
    const size_t p2 = tag.find('.', p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos)
      throw Error("malformed cache tag '" + tag + "'");
    *layer = std::stoi(tag.substr(p1 + 1, p2 - p1 - 1));
    *head = std::stoi(tag.substr(p2 + 1));
  }

 public:
  // trace capture, called by the orchestrator after each Add
  void maybe_capture(const Instr& in) {
    if (!trace) return;
    if (in.op != Op::Add) return;
    const bool embed_add = in.src2.is_mem() && in.src2.tag == "wpebuf";
    if (embed_add) {
      PassTrace& pt = trace->passes[pending_pass_position_];
      pt.position = pending_pass_position_;
      const auto x = read_span(in.dst);
      pt.x_in.assign(x.begin(), x.end());
      return;
    }
    // layer-close residual: out_act = ffn2_full + c_attn
    int pos = -1;
    if (in.src1.is_mem() && in.src1.tag == "f2m") {
      pos = int(in.dst.off / cfg_.model.emb);
    } else if (in.src1.is_mem() && in.src1.tag == "g_f2f") {
      pos = pending_pass_position_;
    } else if (in.src1.space == Space::VReg && in.src1.index == cg::kWin1 &&
               in.dst.space == Space::VReg && in.dst.index == cg::kWin0 &&
               in.src2.space == Space::VReg && in.src2.index == cg::kWin2) {
      pos = pending_pass_position_;
    }
    if (pos < 0) return;
    PassTrace& pt = trace->passes[pos];
    pt.position = pos;
    const auto y = read_span(in.dst);
    pt.layer_out.emplace_back(y.begin(), y.end());
  }

  int32_t token_out_at(int slot) const { return tokens_out_[size_t(slot)]; }
  int64_t pending_send_start() const { return pending_send_start_; }

 private:
  const ClusterConfig& cfg_;
  const Program& prog_;
  const WeightStore* hbm_;
  const DdrStore* ddr_;

  RegisterFile rf_;
  std::unordered_map<std::string, std::vector<Fp16>> scratch_;
  KVCache kv_;
  std::vector<int32_t> tokens_, tokens_out_;
  UnitEvents events_;

  // timelines
  int64_t mfu_free_ = 0, vfu_free_ = 0, dma_free_ = 0, router_free_ = 0;
  std::array<int64_t, 64> vreg_ready_{};
  std::array<int64_t, 64> sreg_ready_{};
  std::unordered_map<std::string, exec_detail::MemTimeline> mem_ready_;
  int64_t completion_ = 0;
  std::array<int64_t, kNumStatCats> cat_{};
  int64_t hazards_ = 0, vt_stalls_ = 0;
  int softmax_depth_ = 0;
  int pending_pass_position_ = 0;
  int64_t pending_send_start_ = 0;
};

// ---------------------------------------------------------------------------
// Cluster orchestration

struct RunResult {
  TokenSeq tokens;
  RunStats stats;
};

inline RunResult run_generation(const ClusterConfig& cluster,
                                const ModelWeights& weights,
                                const TokenSeq& input, int n_out,
                                uint64_t seed = 0, RunTrace* trace = nullptr) {
  (void)seed; // greedy decoding is deterministic; kept for the interface
  cluster.validate();
  if (!(weights.cfg == cluster.model))
    throw Error("run: weights do not match the cluster model config");
  input.validate(cluster.model);
  const int n_in = int(input.ids.size());
  if (n_in < 1 || n_out < 1)
    throw Error("run: need at least one input and one output token");
  if (n_in + n_out > cluster.model.max_seq)
    throw Error("run: sequence length overflow");

  const auto shards = make_shards(cluster.model, cluster.n_cores);
  const DdrStore ddr = build_ddr_store(weights);

  std::vector<Program> programs;
  std::vector<WeightStore> hbm;
  for (const ShardSpec& s : shards) {
    Program p = emit_full_program(cluster.model, s, n_in, n_out, cluster.geom);
    const auto diags = validate(p, cluster.model);
    if (!diags.empty())
      throw Error("core " + std::to_string(s.core_id) +
                  " program invalid: " + diags.front());
    programs.push_back(std::move(p));
    hbm.push_back(build_weight_store(weights, s, cluster.geom));
  }

  std::vector<CoreExecutor> cores;
  cores.reserve(programs.size());
  for (size_t c = 0; c < programs.size(); ++c)
    cores.emplace_back(cluster, programs[c], &hbm[c], &ddr);
  for (auto& core : cores) core.preload_tokens(input);
  if (trace) cores[0].trace = trace;

  const size_t n_instr = programs[0].instrs.size();
  for (const Program& p : programs)
    if (p.instrs.size() != n_instr)
      throw Error("deadlock: cores disagree on program structure");

  const int n = cluster.n_cores;
  for (size_t i = 0; i < n_instr; ++i) {
    const Op op0 = programs[0].instrs[i].op;
    for (const Program& p : programs)
      if (p.instrs[i].op != op0)
        throw Error("deadlock: core absent at barrier (instruction " +
                    std::to_string(i) + ")");

    if (op0 == Op::Send) {
      // paired with the recv at i+1: gather, stamp, deliver
      if (i + 1 >= n_instr || programs[0].instrs[i + 1].op != Op::Recv)
        throw Error("deadlock: send without a matching recv");
      std::vector<std::vector<Fp16>> slices;
      int64_t latest = 0;
      std::vector<CoreExecutor::SendState> st;
      for (int c = 0; c < n; ++c) {
        st.push_back(cores[size_t(c)].exec_send(programs[size_t(c)].instrs[i]));
        latest = std::max(latest, st.back().wire_time);
        slices.push_back(st.back().slice);
      }
      const RingSyncResult sync = ring_sync(slices, cluster.link);
      const int64_t sync_end = latest + sync.cycles;
      for (int c = 0; c < n; ++c)
        cores[size_t(c)].exec_recv(programs[size_t(c)].instrs[i + 1],
                                   sync.gathered, sync_end);
      ++i; // consumed the recv as well
      continue;
    }
    if (op0 == Op::Recv) throw Error("deadlock: recv without a send");

    for (int c = 0; c < n; ++c) {
      cores[size_t(c)].exec(programs[size_t(c)].instrs[i]);
      cores[size_t(c)].maybe_capture(programs[size_t(c)].instrs[i]);
    }
  }

  // collect and cross-check the output tokens
  RunResult out;
  for (int g = 0; g < n_out; ++g) {
    const int32_t t0 = cores[0].token_at(n_in + g);
    for (int c = 1; c < n; ++c)
      if (cores[size_t(c)].token_at(n_in + g) != t0)
        throw Error("cores disagree on output token " + std::to_string(g));
    if (t0 < 0) throw Error("output token " + std::to_string(g) + " missing");
    if (cores[0].token_out_at(n_in + g) != t0)
      throw Error("staged output token mismatch");
    out.tokens.ids.push_back(t0);
  }

  // KV shape invariant: every owned (layer, head) grew one row per pass
  const int expect_rows = n_in + n_out - 1;
  for (int c = 0; c < n; ++c)
    for (int l = 0; l < cluster.model.n_layer; ++l)
      for (int h = shards[size_t(c)].head_lo; h < shards[size_t(c)].head_hi; ++h) {
        if (cores[size_t(c)].kv().key_rows(l, h) != expect_rows ||
            cores[size_t(c)].kv().value_cols(l, h) != expect_rows)
          throw Error("kv cache shape invariant violated");
      }

  // stats from the slowest core; barriers keep the clocks aligned
  size_t slowest = 0;
  for (size_t c = 1; c < cores.size(); ++c)
    if (cores[c].completion() > cores[slowest].completion()) slowest = c;
  RunStats& st = out.stats;
  st.cycles = cores[slowest].cat_cycles();
  st.total_cycles = cores[slowest].completion();
  st.tokens = n_out;
  st.clock_hz = cluster.clock_hz;
  for (const auto& core : cores) {
    st.hazard_violations += core.hazard_violations();
    st.value_transpose_stalls += core.value_transpose_stalls();
    st.inf_events += core.inf_events();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form memory-bound lower bound: every emitted token pass must
// stream at least the full (sharded) weight stack once per generation
// pass plus once for the whole summarization batch, the LM head matrix
// streams per emitted token, and each ring sync pays its hop latency.

inline int64_t latency_model_check(const ClusterConfig& cluster, int n_in,
                                   int n_out) {
  cluster.validate();
  const GPTConfig& m = cluster.model;
  const auto shards = make_shards(m, cluster.n_cores);
  const ShardSpec& s = shards[0];
  const int64_t per_layer =
      3 * hbm_beats(m.emb, s.qkv_cols.len(), cluster.geom) +
      hbm_beats(m.emb, s.attn_cols.len(), cluster.geom) +
      hbm_beats(m.emb, s.ffn1_cols.len(), cluster.geom) +
      hbm_beats(m.ffn_dim(), s.ffn2_cols.len(), cluster.geom);
  const int64_t stack = per_layer * m.n_layer;
  const int64_t lm_head = hbm_beats(m.emb, m.vocab, cluster.geom);
  const int64_t passes = 1 + (n_out - 1); // summarization batch + feedback passes
  int64_t bound = stack * passes + lm_head * n_out;
  if (cluster.n_cores > 1) {
    const int64_t syncs = 4LL * m.n_layer * (int64_t(n_in) + n_out - 1);
    bound += syncs * (cluster.n_cores - 1) * cluster.link.hop_latency;
  }
  return bound;
}

} // namespace tgsim

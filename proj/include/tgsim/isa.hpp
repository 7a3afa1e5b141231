#pragma once
#define TGSIM_ISA_HPP_INCLUDED

// The appliance instruction set: compute, dma and router instructions,
// a canonical line-oriented assembly form, and static validation.
//
// Compute instructions follow (op, src1, src2, dst) with a location
// flag per operand (off-chip memory or register file). Matrix ops take
// their input vector/matrix through the trailing "x=" flag and an
// optional "rows=" batch count. dma and router instructions follow
// (op, src, dst, xfer_size).

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgsim/config.hpp"

namespace tgsim {

enum class Op {
  // compute: matrix
  Conv1D, MaskedMM, MM,
  // compute: vector / special
  Add, Sub, Mul, Accum, RecipSqrt, Recip, Exp, Load, Store, Gelu, ReduMax,
  // dma
  ReadWeights, ReadDdr, WriteKv, WriteDdr,
  // router
  Send, Recv,
};

enum class InstrKind { Compute, Dma, Router };

inline InstrKind kind_of(Op op) {
  switch (op) {
    case Op::ReadWeights: case Op::ReadDdr: case Op::WriteKv: case Op::WriteDdr:
      return InstrKind::Dma;
    case Op::Send: case Op::Recv:
      return InstrKind::Router;
    default:
      return InstrKind::Compute;
  }
}

inline bool is_matrix_op(Op op) {
  return op == Op::Conv1D || op == Op::MaskedMM || op == Op::MM;
}

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Conv1D: return "conv1d";
    case Op::MaskedMM: return "maskedmm";
    case Op::MM: return "mm";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Accum: return "accum";
    case Op::RecipSqrt: return "recip_sqrt";
    case Op::Recip: return "recip";
    case Op::Exp: return "exp";
    case Op::Load: return "load";
    case Op::Store: return "store";
    case Op::Gelu: return "gelu";
    case Op::ReduMax: return "redu_max";
    case Op::ReadWeights: return "dma.read_weights";
    case Op::ReadDdr: return "dma.read_ddr";
    case Op::WriteKv: return "dma.write_kv";
    case Op::WriteDdr: return "dma.write_ddr";
    case Op::Send: return "router.send";
    case Op::Recv: return "router.recv";
  }
  return "?";
}

enum class Space { None, VReg, SReg, Hbm, Ddr, Peer };

// Register operands address chunk windows of the vector register file
// (count chunks of d elements) or a scalar register. Memory operands
// name a symbol, optionally sliced as [elem_off:elem_len] over the
// symbol's flattened row-major extent.
struct Operand {
  Space space = Space::None;
  int index = 0;    // register base
  int count = 1;    // register window length, chunks
  std::string tag;  // symbol name for hbm/ddr
  int64_t off = 0;  // element slice offset (memory operands)
  int64_t len = 0;  // element slice length, 0 = whole symbol

  bool is_none() const { return space == Space::None; }
  bool is_mem() const { return space == Space::Hbm || space == Space::Ddr; }
  bool is_reg() const { return space == Space::VReg || space == Space::SReg; }

  static Operand none() { return {}; }
  static Operand vreg(int base, int chunks = 1) {
    return {Space::VReg, base, chunks, {}, 0, 0};
  }
  static Operand sreg(int i) { return {Space::SReg, i, 1, {}, 0, 0}; }
  static Operand peer() { return {Space::Peer, 0, 1, {}, 0, 0}; }
  static Operand mem(Space sp, std::string tag, int64_t off = 0, int64_t len = 0) {
    Operand o;
    o.space = sp;
    o.tag = std::move(tag);
    o.off = off;
    o.len = len;
    return o;
  }

  bool operator==(const Operand&) const = default;
};

// Row selection for indexed memory reads (embedding lookups):
// a literal row, or indirection through a token buffer slot.
struct RowSel {
  enum class Kind { None, Literal, TokenSlot } kind = Kind::None;
  int value = 0;

  static RowSel literal(int v) { return {Kind::Literal, v}; }
  static RowSel token_slot(int v) { return {Kind::TokenSlot, v}; }

  bool operator==(const RowSel&) const = default;
};

struct Instr {
  Op op = Op::Add;
  Operand dst, src1, src2;
  Operand x;         // matrix-op input vector/matrix
  int rows = 1;      // batched matrix-op input row count
  RowSel idx;        // indexed row read
  bool argmax = false; // redu_max mode
  int64_t xfer = 0;  // dma/router transfer size, elements

  bool operator==(const Instr&) const = default;
};

struct SymbolInfo {
  Space space = Space::Ddr;
  std::string tag;
  int64_t rows = 0;
  int64_t cols = 0;
  int tok = -1; // owning token index, -1 if not token-bound

  int64_t elems() const { return rows * cols; }
  bool operator==(const SymbolInfo&) const = default;
};

struct ProgramMeta {
  int core_id = 0;
  int n_cores = 1;
  int n_layer = 0;
  int n_in = 0;
  int n_out = 0;

  bool operator==(const ProgramMeta&) const = default;
};

struct Program {
  ProgramMeta meta;
  std::vector<SymbolInfo> symbols;
  std::vector<Instr> instrs;

  bool operator==(const Program& o) const {
    return meta == o.meta && symbols == o.symbols && instrs == o.instrs;
  }

  const SymbolInfo* find_symbol(const std::string& tag) const {
    rebuild_index();
    auto it = index_.find(tag);
    return it == index_.end() ? nullptr : &symbols[it->second];
  }

  void add_symbol(SymbolInfo s) {
    symbols.push_back(std::move(s));
    index_valid_ = false;
  }

 private:
  void rebuild_index() const {
    if (index_valid_ && index_.size() == symbols.size()) return;
    index_.clear();
    for (size_t i = 0; i < symbols.size(); ++i) index_[symbols[i].tag] = i;
    index_valid_ = true;
  }
  mutable std::unordered_map<std::string, size_t> index_;
  mutable bool index_valid_ = false;
};

// ---------------------------------------------------------------------------
// Formatting

namespace detail {

inline std::string operand_str(const Operand& o) {
  switch (o.space) {
    case Space::None: return "_";
    case Space::Peer: return "peer";
    case Space::SReg: return "s" + std::to_string(o.index);
    case Space::VReg:
      return o.count == 1 ? "v" + std::to_string(o.index)
                          : "v" + std::to_string(o.index) + ":" +
                                std::to_string(o.count);
    case Space::Hbm:
    case Space::Ddr: {
      std::string s = (o.space == Space::Hbm ? "hbm:" : "ddr:") + o.tag;
      if (o.len != 0)
        s += "[" + std::to_string(o.off) + ":" + std::to_string(o.len) + "]";
      return s;
    }
  }
  return "?";
}

} // namespace detail

inline std::string format_instr(const Instr& in) {
  std::string s(op_name(in.op));
  s += " ";
  if (kind_of(in.op) == InstrKind::Compute) {
    s += detail::operand_str(in.dst) + ", " + detail::operand_str(in.src1) +
         ", " + detail::operand_str(in.src2);
    if (!in.x.is_none()) s += " x=" + detail::operand_str(in.x);
    if (in.rows != 1) s += " rows=" + std::to_string(in.rows);
    if (in.idx.kind == RowSel::Kind::Literal)
      s += " idx=" + std::to_string(in.idx.value);
    else if (in.idx.kind == RowSel::Kind::TokenSlot)
      s += " idx=@" + std::to_string(in.idx.value);
    if (in.argmax) s += " mode=argmax";
  } else {
    s += detail::operand_str(in.src1) + " -> " + detail::operand_str(in.dst) +
         ", " + std::to_string(in.xfer);
    if (in.rows != 1) s += " rows=" + std::to_string(in.rows);
    if (in.idx.kind == RowSel::Kind::Literal)
      s += " idx=" + std::to_string(in.idx.value);
    else if (in.idx.kind == RowSel::Kind::TokenSlot)
      s += " idx=@" + std::to_string(in.idx.value);
  }
  return s;
}

inline std::string format(const Program& p) {
  std::ostringstream out;
  out << ".meta core " << p.meta.core_id << " cores " << p.meta.n_cores
      << " layers " << p.meta.n_layer << " n_in " << p.meta.n_in << " n_out "
      << p.meta.n_out << "\n";
  for (const SymbolInfo& s : p.symbols) {
    out << ".sym " << (s.space == Space::Hbm ? "hbm" : "ddr") << " " << s.tag
        << " " << s.rows << " " << s.cols;
    if (s.tok >= 0) out << " tok=" << s.tok;
    out << "\n";
  }
  for (const Instr& in : p.instrs) out << format_instr(in) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline int64_t parse_int(const std::string& s, int line) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("asm line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
}

inline Operand parse_operand(std::string s, int line) {
  if (s == "_") return Operand::none();
  if (s == "peer") return Operand::peer();
  if (s[0] == 'v' || s[0] == 's') {
    const bool vec = s[0] == 'v';
    const std::string body = s.substr(1);
    const size_t colon = body.find(':');
    if (!vec && colon != std::string::npos)
      throw Error("asm line " + std::to_string(line) +
                  ": scalar register cannot have a window");
    const int base = int(parse_int(colon == std::string::npos
                                       ? body
                                       : body.substr(0, colon), line));
    if (!vec) return Operand::sreg(base);
    const int count = colon == std::string::npos
                          ? 1
                          : int(parse_int(body.substr(colon + 1), line));
    return Operand::vreg(base, count);
  }
  Space sp;
  if (s.rfind("hbm:", 0) == 0) sp = Space::Hbm;
  else if (s.rfind("ddr:", 0) == 0) sp = Space::Ddr;
  else throw Error("asm line " + std::to_string(line) + ": malformed operand '" + s + "'");
  s = s.substr(4);
  int64_t off = 0, len = 0;
  const size_t br = s.find('[');
  if (br != std::string::npos) {
    if (s.back() != ']')
      throw Error("asm line " + std::to_string(line) + ": malformed slice in '" + s + "'");
    const std::string slice = s.substr(br + 1, s.size() - br - 2);
    const size_t colon = slice.find(':');
    if (colon == std::string::npos)
      throw Error("asm line " + std::to_string(line) + ": slice needs off:len");
    off = parse_int(slice.substr(0, colon), line);
    len = parse_int(slice.substr(colon + 1), line);
    s = s.substr(0, br);
  }
  if (s.empty())
    throw Error("asm line " + std::to_string(line) + ": empty symbol tag");
  return Operand::mem(sp, s, off, len);
}

inline std::optional<Op> op_from_name(const std::string& s) {
  static const std::unordered_map<std::string, Op> table = [] {
    std::unordered_map<std::string, Op> t;
    for (int i = 0; i <= int(Op::Recv); ++i)
      t[op_name(Op(i))] = Op(i);
    return t;
  }();
  const auto it = table.find(s);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

inline void parse_flag(Instr& in, const std::string& flag, int line) {
  const size_t eq = flag.find('=');
  if (eq == std::string::npos)
    throw Error("asm line " + std::to_string(line) + ": bad flag '" + flag + "'");
  const std::string key = flag.substr(0, eq);
  const std::string val = flag.substr(eq + 1);
  if (key == "x") {
    in.x = parse_operand(val, line);
  } else if (key == "rows") {
    in.rows = int(parse_int(val, line));
  } else if (key == "idx") {
    if (val.empty())
      throw Error("asm line " + std::to_string(line) + ": idx needs a value");
    if (val[0] == '@')
      in.idx = RowSel::token_slot(int(parse_int(val.substr(1), line)));
    else
      in.idx = RowSel::literal(int(parse_int(val, line)));
  } else if (key == "mode") {
    if (val != "argmax")
      throw Error("asm line " + std::to_string(line) + ": unknown mode '" + val + "'");
    in.argmax = true;
  } else {
    throw Error("asm line " + std::to_string(line) + ": unknown flag '" + key + "'");
  }
}

} // namespace detail

inline Program parse_asm(const std::string& text) {
  Program p;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  bool saw_meta = false;
  while (std::getline(is, raw)) {
    ++line;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    auto toks = detail::split_ws(raw);
    if (toks.empty()) continue;

    if (toks[0] == ".meta") {
      if (toks.size() != 11 || toks[1] != "core" || toks[3] != "cores" ||
          toks[5] != "layers" || toks[7] != "n_in" || toks[9] != "n_out")
        throw Error("asm line " + std::to_string(line) + ": malformed .meta");
      p.meta.core_id = int(detail::parse_int(toks[2], line));
      p.meta.n_cores = int(detail::parse_int(toks[4], line));
      p.meta.n_layer = int(detail::parse_int(toks[6], line));
      p.meta.n_in = int(detail::parse_int(toks[8], line));
      p.meta.n_out = int(detail::parse_int(toks[10], line));
      saw_meta = true;
      continue;
    }
    if (toks[0] == ".sym") {
      if (toks.size() < 5)
        throw Error("asm line " + std::to_string(line) + ": malformed .sym");
      SymbolInfo s;
      if (toks[1] == "hbm") s.space = Space::Hbm;
      else if (toks[1] == "ddr") s.space = Space::Ddr;
      else throw Error("asm line " + std::to_string(line) + ": .sym space must be hbm or ddr");
      s.tag = toks[2];
      s.rows = detail::parse_int(toks[3], line);
      s.cols = detail::parse_int(toks[4], line);
      for (size_t i = 5; i < toks.size(); ++i) {
        if (toks[i].rfind("tok=", 0) == 0)
          s.tok = int(detail::parse_int(toks[i].substr(4), line));
        else
          throw Error("asm line " + std::to_string(line) + ": unknown .sym field");
      }
      p.add_symbol(std::move(s));
      continue;
    }

    const auto op = detail::op_from_name(toks[0]);
    if (!op)
      throw Error("asm line " + std::to_string(line) + ": unknown mnemonic '" +
                  toks[0] + "'");
    Instr in;
    in.op = *op;

    // normalize: strip commas, keep "->" as its own token
    std::vector<std::string> args;
    for (size_t i = 1; i < toks.size(); ++i) {
      std::string t = toks[i];
      while (!t.empty() && t.back() == ',') t.pop_back();
      if (!t.empty()) args.push_back(t);
    }

    if (kind_of(in.op) == InstrKind::Compute) {
      if (args.size() < 3)
        throw Error("asm line " + std::to_string(line) +
                    ": compute needs dst, src1, src2");
      in.dst = detail::parse_operand(args[0], line);
      in.src1 = detail::parse_operand(args[1], line);
      in.src2 = detail::parse_operand(args[2], line);
      for (size_t i = 3; i < args.size(); ++i)
        detail::parse_flag(in, args[i], line);
    } else {
      // op src -> dst, xfer [flags]
      if (args.size() < 4 || args[1] != "->")
        throw Error("asm line " + std::to_string(line) +
                    ": expected 'src -> dst, size'");
      in.src1 = detail::parse_operand(args[0], line);
      in.dst = detail::parse_operand(args[2], line);
      in.xfer = detail::parse_int(args[3], line);
      for (size_t i = 4; i < args.size(); ++i)
        detail::parse_flag(in, args[i], line);
    }
    p.instrs.push_back(std::move(in));
  }
  if (!saw_meta && !p.instrs.empty())
    throw Error("asm: missing .meta directive");
  return p;
}

// ---------------------------------------------------------------------------
// Static validation

struct RegFileShape {
  int n_vregs = 64;
  int n_sregs = 64;
};

namespace detail {

inline int64_t operand_elems(const Program& p, const Operand& o, int d) {
  switch (o.space) {
    case Space::VReg: return int64_t(o.count) * d;
    case Space::SReg: return 1;
    case Space::Hbm:
    case Space::Ddr: {
      if (o.len != 0) return o.len;
      const SymbolInfo* s = p.find_symbol(o.tag);
      return s ? s->elems() : 0;
    }
    default: return 0;
  }
}

} // namespace detail

// Returns an empty list iff every operand reference is in range for cfg
// and the register file, every memory tag resolves, and every router
// instruction has a peer under meta.n_cores.
inline std::vector<std::string> validate(const Program& p, const GPTConfig& cfg,
                                         RegFileShape rf = {}) {
  std::vector<std::string> diags;
  auto bad = [&](size_t i, const std::string& msg) {
    diags.push_back("instr " + std::to_string(i) + " (" +
                    op_name(p.instrs[i].op) + "): " + msg);
  };

  auto check_operand = [&](size_t i, const Operand& o, const char* role) {
    switch (o.space) {
      case Space::None:
      case Space::Peer:
        return;
      case Space::VReg:
        if (o.index < 0 || o.count < 1 || o.index + o.count > rf.n_vregs)
          bad(i, std::string(role) + ": vector register window v" +
                     std::to_string(o.index) + ":" + std::to_string(o.count) +
                     " exceeds register file of " + std::to_string(rf.n_vregs));
        return;
      case Space::SReg:
        if (o.index < 0 || o.index >= rf.n_sregs)
          bad(i, std::string(role) + ": scalar register s" +
                     std::to_string(o.index) + " out of range");
        return;
      case Space::Hbm:
      case Space::Ddr: {
        const SymbolInfo* s = p.find_symbol(o.tag);
        if (!s) {
          bad(i, std::string(role) + ": unresolved symbol '" + o.tag + "'");
          return;
        }
        if ((o.space == Space::Hbm) != (s->space == Space::Hbm))
          bad(i, std::string(role) + ": symbol '" + o.tag + "' lives in the other memory space");
        if (o.len != 0 && (o.off < 0 || o.off + o.len > s->elems()))
          bad(i, std::string(role) + ": slice of '" + o.tag + "' out of bounds");
        return;
      }
    }
  };

  for (size_t i = 0; i < p.instrs.size(); ++i) {
    const Instr& in = p.instrs[i];
    check_operand(i, in.dst, "dst");
    check_operand(i, in.src1, "src1");
    check_operand(i, in.src2, "src2");
    check_operand(i, in.x, "x");

    switch (kind_of(in.op)) {
      case InstrKind::Compute:
        if (is_matrix_op(in.op)) {
          if (!in.src1.is_mem())
            bad(i, "matrix operand src1 must stream from off-chip memory");
          if (in.x.is_none())
            bad(i, "matrix op needs an x= input operand");
          if (in.op == Op::MaskedMM && !in.src2.is_none())
            bad(i, "maskedmm takes no bias operand");
          if (in.rows < 1) bad(i, "rows must be >= 1");
        }
        if (in.op == Op::Accum || in.op == Op::ReduMax) {
          if (in.dst.space != Space::SReg && !in.dst.is_mem())
            bad(i, "reduction result must go to a scalar register or memory");
        }
        if ((in.op == Op::Recip || in.op == Op::RecipSqrt) &&
            in.dst.space != Space::SReg)
          bad(i, "scalar unit result must go to a scalar register");
        if (in.op == Op::Load && !in.src1.is_mem())
          bad(i, "load source must be off-chip memory");
        if (in.op == Op::Store && !in.dst.is_mem())
          bad(i, "store destination must be off-chip memory");
        break;
      case InstrKind::Dma:
        if (in.xfer <= 0) bad(i, "xfer_size must be positive");
        if (in.op == Op::WriteKv && in.dst.space != Space::Hbm)
          bad(i, "write_kv destination must be an hbm cache symbol");
        if (in.op == Op::ReadDdr && in.src1.space != Space::Ddr)
          bad(i, "read_ddr source must be a ddr symbol");
        if (in.op == Op::WriteDdr && in.dst.space != Space::Ddr)
          bad(i, "write_ddr destination must be a ddr symbol");
        if (in.op == Op::ReadWeights && in.src1.space != Space::Hbm)
          bad(i, "read_weights source must be an hbm symbol");
        break;
      case InstrKind::Router:
        if (p.meta.n_cores <= 1) bad(i, "no peer exists");
        if (in.xfer <= 0) bad(i, "xfer_size must be positive");
        if (in.op == Op::Send && in.dst.space != Space::Peer)
          bad(i, "send destination must be peer");
        if (in.op == Op::Recv && in.src1.space != Space::Peer)
          bad(i, "recv source must be peer");
        break;
    }
  }

  if (p.meta.n_cores > 1 && cfg.n_head % p.meta.n_cores != 0)
    diags.push_back("meta: n_cores does not divide n_head");
  return diags;
}

} // namespace tgsim

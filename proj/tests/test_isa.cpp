#include <catch2/catch_amalgamated.hpp>

#include "tgsim/isa.hpp"
#include "test_util.hpp"

using namespace tgsim;

static Program skeleton(int cores = 1) {
  Program p;
  p.meta = {0, cores, 2, 4, 3};
  p.add_symbol({Space::Hbm, "w0", 128, 128, -1});
  p.add_symbol({Space::Ddr, "b0", 1, 128, -1});
  return p;
}

TEST_CASE("parse of spec'd forms") {
  const std::string src =
      ".meta core 0 cores 1 layers 2 n_in 4 n_out 3\n"
      ".sym hbm w0 128 128\n"
      ".sym ddr b0 1 128\n"
      "conv1d v2, hbm:w0, ddr:b0 x=v0:2\n";
  const Program p = parse_asm(src);
  REQUIRE(p.instrs.size() == 1);
  const Instr& in = p.instrs[0];
  CHECK(in.op == Op::Conv1D);
  CHECK(kind_of(in.op) == InstrKind::Compute);
  CHECK(in.src1 == Operand::mem(Space::Hbm, "w0"));
  CHECK(in.src2 == Operand::mem(Space::Ddr, "b0"));
  CHECK(in.dst == Operand::vreg(2));
  CHECK(in.x == Operand::vreg(0, 2));
}

TEST_CASE("parse router send with xfer size") {
  const std::string src =
      ".meta core 0 cores 2 layers 1 n_in 1 n_out 1\n"
      "router.send v5 -> peer, 384\n";
  const Program p = parse_asm(src);
  REQUIRE(p.instrs.size() == 1);
  CHECK(p.instrs[0].op == Op::Send);
  CHECK(kind_of(p.instrs[0].op) == InstrKind::Router);
  CHECK(p.instrs[0].xfer == 384);
  CHECK(p.instrs[0].src1 == Operand::vreg(5));
  CHECK(p.instrs[0].dst == Operand::peer());
}

TEST_CASE("unknown mnemonic is an error") {
  CHECK_THROWS_AS(parse_asm(".meta core 0 cores 1 layers 1 n_in 1 n_out 1\n"
                            "frobnicate v1, v2, v3\n"),
                  Error);
}

TEST_CASE("malformed operands are errors") {
  const std::string head = ".meta core 0 cores 1 layers 1 n_in 1 n_out 1\n";
  CHECK_THROWS_AS(parse_asm(head + "add v1, q9, v2\n"), Error);
  CHECK_THROWS_AS(parse_asm(head + "add v1, hbm:, v2\n"), Error);
  CHECK_THROWS_AS(parse_asm(head + "add v1, ddr:x[3:, v2\n"), Error);
  CHECK_THROWS_AS(parse_asm(head + "dma.read_ddr ddr:x v1, 4\n"), Error);
  CHECK_THROWS_AS(parse_asm(head + "add v1, v2, v3 bogus=1\n"), Error);
}

TEST_CASE("comments and blank lines are skipped") {
  const Program p = parse_asm(
      "# top comment\n"
      ".meta core 0 cores 1 layers 1 n_in 1 n_out 1\n"
      "\n"
      "add v1, v2, v3   # inline\n");
  CHECK(p.instrs.size() == 1);
}

TEST_CASE("empty program formats to meta only") {
  Program p;
  p.meta = {0, 1, 1, 1, 1};
  const std::string text = format(p);
  CHECK(text == ".meta core 0 cores 1 layers 1 n_in 1 n_out 1\n");
  CHECK(parse_asm(text) == p);
}

TEST_CASE("all fourteen compute ops format one line each") {
  Program p = skeleton();
  const Op ops[] = {Op::Conv1D, Op::MaskedMM, Op::MM, Op::Add, Op::Sub,
                    Op::Mul, Op::Accum, Op::RecipSqrt, Op::Recip, Op::Exp,
                    Op::Load, Op::Store, Op::Gelu, Op::ReduMax};
  for (Op op : ops) {
    Instr in;
    in.op = op;
    in.dst = op == Op::Accum || op == Op::ReduMax || op == Op::Recip ||
                     op == Op::RecipSqrt
                 ? Operand::sreg(1)
                 : Operand::vreg(1);
    in.src1 = is_matrix_op(op) || op == Op::Load
                  ? Operand::mem(Space::Hbm, "w0")
                  : Operand::vreg(2);
    if (op == Op::Store) {
      in.dst = Operand::mem(Space::Ddr, "b0", 0, 64);
      in.src1 = Operand::vreg(2);
    }
    if (is_matrix_op(op)) in.x = Operand::vreg(0, 2);
    p.instrs.push_back(in);
  }
  const std::string text = format(p);
  int lines = 0;
  for (char c : text) lines += c == '\n';
  CHECK(lines == 14 + 1 + 2); // ops + .meta + two .sym
  CHECK(parse_asm(text) == p);
}

static Program random_program(testutil::SplitMix64& rng) {
  Program p;
  p.meta = {int(rng.below(4)), int(rng.below(4)) + 1, int(rng.below(8)) + 1,
            int(rng.below(16)) + 1, int(rng.below(16)) + 1};
  p.add_symbol({Space::Hbm, "wq.0", 128, 128, -1});
  p.add_symbol({Space::Ddr, "act.3", 1, 128, 3});
  p.add_symbol({Space::Ddr, "tok", 64, 1, -1});

  auto random_operand = [&](bool mem_ok) -> Operand {
    switch (rng.below(mem_ok ? 5 : 3)) {
      case 0: return Operand::vreg(int(rng.below(60)), int(rng.below(4)) + 1);
      case 1: return Operand::sreg(int(rng.below(64)));
      case 2: return Operand::vreg(int(rng.below(64)));
      case 3: return Operand::mem(Space::Hbm, "wq.0");
      default:
        return Operand::mem(Space::Ddr, "act.3", int64_t(rng.below(64)),
                            int64_t(rng.below(63)) + 1);
    }
  };

  const int n = 1 + int(rng.below(40));
  for (int i = 0; i < n; ++i) {
    Instr in;
    switch (rng.below(6)) {
      case 0: {
        in.op = Op::Conv1D;
        in.dst = random_operand(true);
        in.src1 = Operand::mem(Space::Hbm, "wq.0");
        in.src2 = Operand::mem(Space::Ddr, "act.3");
        in.x = random_operand(true);
        in.rows = int(rng.below(4)) + 1;
        break;
      }
      case 1: {
        in.op = Op(int(Op::Add) + int(rng.below(7)));
        in.dst = in.op == Op::Accum ? Operand::sreg(int(rng.below(64)))
                                    : random_operand(true);
        in.src1 = random_operand(true);
        in.src2 = rng.below(2) ? random_operand(false) : Operand::none();
        if (in.op == Op::Recip || in.op == Op::RecipSqrt) {
          in.dst = Operand::sreg(int(rng.below(64)));
          in.src1 = Operand::sreg(int(rng.below(64)));
          in.src2 = Operand::none();
        }
        break;
      }
      case 2: {
        in.op = Op::ReduMax;
        in.dst = rng.below(2) ? Operand::sreg(int(rng.below(64)))
                              : Operand::mem(Space::Ddr, "tok", 3, 1);
        in.src1 = random_operand(true);
        in.argmax = rng.below(2) == 1;
        break;
      }
      case 3: {
        in.op = rng.below(2) ? Op::Send : Op::Recv;
        if (in.op == Op::Send) {
          in.src1 = random_operand(true);
          in.dst = Operand::peer();
        } else {
          in.src1 = Operand::peer();
          in.dst = random_operand(true);
        }
        in.xfer = int64_t(rng.below(4096)) + 1;
        break;
      }
      case 4: {
        in.op = Op(int(Op::ReadWeights) + int(rng.below(4)));
        in.src1 = in.op == Op::ReadWeights
                      ? Operand::mem(Space::Hbm, "wq.0")
                      : Operand::mem(Space::Ddr, "act.3");
        in.dst = in.op == Op::WriteKv ? Operand::mem(Space::Hbm, "wq.0")
                                      : random_operand(true);
        in.xfer = int64_t(rng.below(4096)) + 1;
        if (rng.below(3) == 0)
          in.idx = rng.below(2) ? RowSel::literal(int(rng.below(100)))
                                : RowSel::token_slot(int(rng.below(100)));
        in.rows = int(rng.below(3)) + 1;
        break;
      }
      default: {
        in.op = Op::Load;
        in.dst = Operand::vreg(int(rng.below(63)), 1);
        in.src1 = Operand::mem(Space::Ddr, "act.3", 0, 64);
        if (rng.below(3) == 0)
          in.idx = RowSel::token_slot(int(rng.below(100)));
        break;
      }
    }
    p.instrs.push_back(in);
  }
  return p;
}

TEST_CASE("format / parse round-trip on generated programs") {
  testutil::SplitMix64 rng(0xA5A5);
  for (int iter = 0; iter < 300; ++iter) {
    const Program p = random_program(rng);
    const std::string text = format(p);
    Program q;
    REQUIRE_NOTHROW(q = parse_asm(text));
    if (!(q == p)) {
      INFO(text);
      REQUIRE(q == p);
    }
    // canonical form is a fixed point
    CHECK(format(q) == text);
  }
}

TEST_CASE("validate flags router use without peers") {
  Program p = skeleton(1);
  Instr in;
  in.op = Op::Send;
  in.src1 = Operand::vreg(0);
  in.dst = Operand::peer();
  in.xfer = 64;
  p.instrs.push_back(in);
  const auto diags = validate(p, config_for("tiny"));
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].find("no peer exists") != std::string::npos);
}

TEST_CASE("validate flags register overflow and bad symbols") {
  Program p = skeleton(1);
  Instr in;
  in.op = Op::Add;
  in.dst = Operand::vreg(60, 8); // spills past v63
  in.src1 = Operand::vreg(0);
  in.src2 = Operand::mem(Space::Ddr, "nosuch");
  p.instrs.push_back(in);
  const auto diags = validate(p, config_for("tiny"));
  REQUIRE(diags.size() == 2);
  CHECK(diags[0].find("exceeds register file") != std::string::npos);
  CHECK(diags[1].find("unresolved symbol") != std::string::npos);
}

TEST_CASE("validate accepts a clean program") {
  Program p = skeleton(1);
  Instr in;
  in.op = Op::Conv1D;
  in.dst = Operand::vreg(2, 2);
  in.src1 = Operand::mem(Space::Hbm, "w0");
  in.src2 = Operand::mem(Space::Ddr, "b0");
  in.x = Operand::vreg(0, 2);
  p.instrs.push_back(in);
  CHECK(validate(p, config_for("tiny")).empty());
}

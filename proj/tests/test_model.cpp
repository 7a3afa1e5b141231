#include <catch2/catch_amalgamated.hpp>

#include "tgsim/config.hpp"
#include "tgsim/tensor.hpp"
#include "test_util.hpp"

using namespace tgsim;

TEST_CASE("named presets") {
  const GPTConfig m345 = config_for("345M");
  CHECK(m345.emb == 1024);
  CHECK(m345.n_head == 16);
  CHECK(m345.d_head == 64);
  CHECK(m345.n_layer == 24);

  const GPTConfig m15 = config_for("1.5B");
  CHECK(m15.emb == 1536);
  CHECK(m15.n_head == 24);
  CHECK(m15.d_head == 64);
  CHECK(m15.n_layer == 48);

  const GPTConfig m774 = config_for("774M");
  CHECK(m774.emb == 1280);
  CHECK(m774.n_head == 20);
  CHECK(m774.n_layer == 36);

  for (const char* name : {"345M", "774M", "1.5B"}) {
    const GPTConfig c = config_for(name);
    CHECK(c.vocab == 50257);
    CHECK(c.max_seq == 1024);
    CHECK(c.ffn_mult == 4);
    CHECK(c.emb == c.n_head * c.d_head);
    CHECK_NOTHROW(c.validate());
  }
}

TEST_CASE("unknown preset is an error") {
  CHECK_THROWS_AS(config_for("13B"), Error);
}

TEST_CASE("custom config literal") {
  const GPTConfig c = config_for("emb=128,n_head=2,n_layer=2,vocab=512,max_seq=256");
  CHECK(c == config_for("tiny"));
  CHECK_THROWS_AS(config_for("emb=100,n_head=3,n_layer=1,vocab=4"), Error);
  CHECK_THROWS_AS(config_for("emb=128,n_head=2,n_layer=0,vocab=4"), Error);
  CHECK_THROWS_AS(config_for("emb=128,bogus=1"), Error);
}

TEST_CASE("token sequence validation") {
  const GPTConfig c = config_for("tiny");
  TokenSeq ok{{0, 511, 42}};
  CHECK_NOTHROW(ok.validate(c));
  TokenSeq bad{{512}};
  CHECK_THROWS_AS(bad.validate(c), Error);
  TokenSeq neg{{-1}};
  CHECK_THROWS_AS(neg.validate(c), Error);
}

TEST_CASE("kv cache append shapes") {
  KVCache kv(2, 2, 64, 256);
  std::vector<Fp16> k(64), v(64);
  for (int i = 0; i < 64; ++i) {
    k[i] = f16(i);
    v[i] = f16(i + 1); // v_row = [1..64]
  }
  kv.append(0, 1, k, v);
  CHECK(kv.rows(0, 1) == 1);
  CHECK(kv.rows(0, 0) == 0);
  CHECK(kv.key(0, 1).rows == 1);
  CHECK(kv.key(0, 1).cols == 64);
  CHECK(kv.value_t(0, 1).rows == 64);
  CHECK(kv.value_t(0, 1).cols == 1);
  for (int i = 0; i < 64; ++i) {
    CHECK(kv.value_t_at(0, 1, i, 0) == f16(i + 1));
    CHECK(kv.key_at(0, 1, 0, i) == f16(i));
  }
}

TEST_CASE("kv cache grows one row per append and transposes values") {
  testutil::SplitMix64 rng(77);
  KVCache kv(1, 1, 64, 256);
  std::vector<std::vector<Fp16>> appended;
  for (int t = 0; t < 9; ++t) {
    std::vector<Fp16> k(64), v(64);
    for (int i = 0; i < 64; ++i) {
      k[i] = f16(rng.uniform(-1, 1));
      v[i] = f16(rng.uniform(-1, 1));
    }
    appended.push_back(v);
    kv.append(0, 0, k, v);
    CHECK(kv.rows(0, 0) == t + 1);
  }
  // value_t^T must equal the stacked appended rows (brute-force check)
  const TensorF16 vt = kv.value_t(0, 0);
  for (int t = 0; t < 9; ++t)
    for (int i = 0; i < 64; ++i) CHECK(vt.at(i, t) == appended[t][i]);
}

TEST_CASE("kv cache overflow") {
  KVCache kv(1, 1, 64, 2);
  const std::vector<Fp16> row(64, f16(0.5));
  kv.append(0, 0, row, row);
  kv.append(0, 0, row, row);
  CHECK_THROWS_AS(kv.append(0, 0, row, row), Error);
}

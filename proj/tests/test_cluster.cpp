#include <catch2/catch_amalgamated.hpp>

#include "tgsim/cluster.hpp"
#include "tgsim/oracle.hpp"
#include "test_util.hpp"

using namespace tgsim;

namespace {

ClusterConfig make_cluster(const GPTConfig& model, int cores) {
  ClusterConfig c;
  c.model = model;
  c.n_cores = cores;
  return c;
}

} // namespace

TEST_CASE("tiny end-to-end run produces tokens and conserved stats") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 1234);
  const ClusterConfig cl = make_cluster(cfg, 1);
  const TokenSeq input{{5, 96, 203, 444}};

  const RunResult r = run_generation(cl, w, input, 3);
  REQUIRE(r.tokens.ids.size() == 3);
  for (int32_t t : r.tokens.ids) {
    CHECK(t >= 0);
    CHECK(t < cfg.vocab);
  }
  // stats conservation: per-category cycles sum exactly to the total
  int64_t sum = 0;
  for (int c = 0; c < kNumStatCats; ++c) sum += r.stats.cycles[size_t(c)];
  CHECK(sum == r.stats.total_cycles);
  CHECK(r.stats.total_cycles > 0);
  CHECK(r.stats.tokens == 3);
  CHECK(r.stats.hazard_violations == 0);
  CHECK(r.stats.value_transpose_stalls == 0);
}

TEST_CASE("determinism: identical runs are identical in full") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 99);
  const ClusterConfig cl = make_cluster(cfg, 2);
  const TokenSeq input{{1, 2, 3}};
  const RunResult a = run_generation(cl, w, input, 4, 7);
  const RunResult b = run_generation(cl, w, input, 4, 7);
  CHECK(a.tokens == b.tokens);
  CHECK(a.stats.total_cycles == b.stats.total_cycles);
  CHECK(a.stats.cycles == b.stats.cycles);
}

TEST_CASE("partition invariance on the tiny preset") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 2024);
  const TokenSeq input{{10, 20, 30, 40, 50}};

  RunTrace tr1, tr2;
  const RunResult r1 = run_generation(make_cluster(cfg, 1), w, input, 4, 0, &tr1);
  const RunResult r2 = run_generation(make_cluster(cfg, 2), w, input, 4, 0, &tr2);
  CHECK(r1.tokens == r2.tokens);

  // final activations bit-identical
  REQUIRE(tr1.passes.size() == tr2.passes.size());
  for (const auto& [pos, pt1] : tr1.passes) {
    const auto& pt2 = tr2.passes.at(pos);
    REQUIRE(pt1.layer_out.size() == pt2.layer_out.size());
    CHECK(pt1.x_in == pt2.x_in);
    for (size_t l = 0; l < pt1.layer_out.size(); ++l)
      CHECK(pt1.layer_out[l] == pt2.layer_out[l]);
  }
}

TEST_CASE("partition invariance on a four-head variant") {
  const GPTConfig cfg =
      config_for("emb=256,n_head=4,n_layer=2,vocab=512,max_seq=64");
  const ModelWeights w = generate_weights(cfg, 777);
  const TokenSeq input{{100, 200, 300}};
  const RunResult r1 = run_generation(make_cluster(cfg, 1), w, input, 3);
  const RunResult r2 = run_generation(make_cluster(cfg, 2), w, input, 3);
  const RunResult r4 = run_generation(make_cluster(cfg, 4), w, input, 3);
  CHECK(r1.tokens == r2.tokens);
  CHECK(r1.tokens == r4.tokens);
}

TEST_CASE("n_out=1 runs the stack once and the cache holds n_in rows") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 4);
  const RunResult r = run_generation(make_cluster(cfg, 1), w, TokenSeq{{7, 8, 9, 10}}, 1);
  CHECK(r.tokens.ids.size() == 1);
  // kv row invariant (n_in + n_out - 1 = 4) is asserted inside the run
}

TEST_CASE("trace captures per-layer outputs that feed the next layer") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 5);
  RunTrace tr;
  const TokenSeq input{{11, 22}};
  run_generation(make_cluster(cfg, 1), w, input, 3, 0, &tr);
  // one pass per processed token: 2 input + 2 generation feedback
  REQUIRE(tr.passes.size() == 4);
  for (const auto& [pos, pt] : tr.passes) {
    CHECK(int(pt.x_in.size()) == cfg.emb);
    REQUIRE(int(pt.layer_out.size()) == cfg.n_layer);
    for (const auto& lo : pt.layer_out) CHECK(int(lo.size()) == cfg.emb);
  }
}

TEST_CASE("sim tokens track the fp32 oracle step by step") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 31415);
  const TokenSeq input{{40, 41, 42, 43}};
  const int n_out = 12;
  const RunResult r = run_generation(make_cluster(cfg, 1), w, input, n_out);

  // teacher-forced comparison: oracle follows the sim's token stream
  oracle::RefModel ref(w);
  std::vector<int32_t> stream(input.ids.begin(), input.ids.end());
  for (int g = 0; g + 1 < n_out; ++g)
    stream.push_back(r.tokens.ids[size_t(g)]);
  int agree = 0, excused = 0;
  for (size_t i = 0; i < stream.size(); ++i) {
    const auto tr = ref.step(stream[i]);
    if (i + 1 < input.ids.size()) continue; // no emitted token yet
    const int emitted = r.tokens.ids[i + 1 - input.ids.size()];
    if (tr.greedy == emitted) {
      ++agree;
    } else {
      const double gap = double(tr.top1) - double(tr.top2);
      if (gap < 4 * f16_ulp_at(tr.top1)) ++excused;
    }
  }
  CHECK(agree + excused == n_out);
  CHECK(agree >= n_out - 1);
}

TEST_CASE("simulated cycles respect the analytic lower bound") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 6);
  for (int cores : {1, 2}) {
    const ClusterConfig cl = make_cluster(cfg, cores);
    const RunResult r = run_generation(cl, w, TokenSeq{{1, 2, 3, 4}}, 4);
    const int64_t bound = latency_model_check(cl, 4, 4);
    INFO(cores << " cores: simulated " << r.stats.total_cycles << " bound "
               << bound);
    CHECK(r.stats.total_cycles >= bound);
  }
}

TEST_CASE("csv row shape is stable") {
  RunStats st;
  st.total_cycles = 100;
  st.tokens = 2;
  const std::string header = RunStats::csv_header();
  const std::string row = st.csv_row(0xabcd, 4, 2, 1);
  const auto count_commas = [](const std::string& s) {
    int n = 0;
    for (char c : s) n += c == ',';
    return n;
  };
  CHECK(count_commas(header) == count_commas(row));
  CHECK(header.substr(0, 11) == "config_hash");
}

TEST_CASE("config and input validation errors") {
  const GPTConfig cfg = config_for("tiny");
  const ModelWeights w = generate_weights(cfg, 8);
  ClusterConfig cl = make_cluster(cfg, 3); // not a power of two
  CHECK_THROWS_AS(run_generation(cl, w, TokenSeq{{1}}, 1), Error);

  cl = make_cluster(cfg, 1);
  CHECK_THROWS_AS(run_generation(cl, w, TokenSeq{{1}}, 0), Error);
  CHECK_THROWS_AS(run_generation(cl, w, TokenSeq{{}}, 1), Error);
  CHECK_THROWS_AS(run_generation(cl, w, TokenSeq{{cfg.vocab}}, 1), Error);
  CHECK_THROWS_AS(run_generation(cl, w, TokenSeq{{1}}, cfg.max_seq + 1), Error);

  const ModelWeights w2 = generate_weights(config_for("emb=128,n_head=2,n_layer=1,vocab=300"), 8);
  CHECK_THROWS_AS(run_generation(cl, w2, TokenSeq{{1}}, 1), Error);
}

TEST_CASE("analytic bound scales with output tokens and sharding") {
  const ClusterConfig c1 = make_cluster(config_for("345M"), 1);
  const int64_t b1 = latency_model_check(c1, 64, 64);
  const int64_t b2 = latency_model_check(c1, 64, 128);
  CHECK(b2 > b1);
  const ClusterConfig c4 = make_cluster(config_for("345M"), 4);
  CHECK(latency_model_check(c4, 64, 64) < b1);
}

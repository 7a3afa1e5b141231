#pragma once

// Dense model weights, the deterministic generator, and the weight
// file format: a structured-text header (config, matrix manifest,
// shard spec) followed by raw little-endian FP16 payloads in manifest
// order, row-major and untiled. Tiling happens at load time.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tgsim/config.hpp"
#include "tgsim/fp16.hpp"
#include "tgsim/tensor.hpp"

namespace tgsim {

// Weight matrices are stored rows = input dimension, columns = output
// dimension; the affine map computes x^T A + b.
struct LayerWeights {
  TensorF16 ln1g, ln1b;            // 1 x emb
  TensorF16 wq, wk, wv;            // emb x emb
  TensorF16 bq, bk, bv;            // 1 x emb
  TensorF16 wa, ba;                // emb x emb, 1 x emb
  TensorF16 ln2g, ln2b;            // 1 x emb
  TensorF16 wf1, bf1;              // emb x ffn, 1 x ffn
  TensorF16 wf2, bf2;              // ffn x emb, 1 x emb

  bool operator==(const LayerWeights&) const = default;
};

struct ModelWeights {
  GPTConfig cfg;
  TensorF16 wte; // vocab x emb
  TensorF16 wpe; // max_seq x emb
  std::vector<LayerWeights> layers;

  bool operator==(const ModelWeights&) const = default;

  int64_t param_count() const {
    int64_t n = int64_t(cfg.vocab) * cfg.emb + int64_t(cfg.max_seq) * cfg.emb;
    const int64_t emb = cfg.emb, ffn = cfg.ffn_dim();
    n += int64_t(cfg.n_layer) *
         (4 * emb + 3 * (emb * emb + emb) + emb * emb + emb + emb * ffn + ffn +
          ffn * emb + emb);
    return n;
  }
};

namespace detail {

struct WeightRng {
  uint64_t state;
  explicit WeightRng(uint64_t seed) : state(seed) {}
  uint64_t next_u64() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }
  // Irwin-Hall sum of 12 uniforms: mean 0, unit variance, and fully
  // portable since no libm is involved.
  double normal() {
    double s = 0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }
};

inline TensorF16 random_tensor(WeightRng& rng, int rows, int cols, double scale,
                               double center = 0.0) {
  TensorF16 t(rows, cols);
  for (auto& v : t.data) v = f16(center + scale * rng.normal());
  return t;
}

} // namespace detail

// Seeded pseudo-random weights, std 0.02; layernorm gains centered at 1.
inline ModelWeights generate_weights(const GPTConfig& cfg, uint64_t seed) {
  cfg.validate();
  detail::WeightRng rng(seed);
  ModelWeights w;
  w.cfg = cfg;
  const int emb = cfg.emb, ffn = cfg.ffn_dim();
  w.wte = detail::random_tensor(rng, cfg.vocab, emb, 0.02);
  w.wpe = detail::random_tensor(rng, cfg.max_seq, emb, 0.02);
  w.layers.resize(cfg.n_layer);
  for (auto& L : w.layers) {
    L.ln1g = detail::random_tensor(rng, 1, emb, 0.02, 1.0);
    L.ln1b = detail::random_tensor(rng, 1, emb, 0.02);
    L.wq = detail::random_tensor(rng, emb, emb, 0.02);
    L.bq = detail::random_tensor(rng, 1, emb, 0.02);
    L.wk = detail::random_tensor(rng, emb, emb, 0.02);
    L.bk = detail::random_tensor(rng, 1, emb, 0.02);
    L.wv = detail::random_tensor(rng, emb, emb, 0.02);
    L.bv = detail::random_tensor(rng, 1, emb, 0.02);
    L.wa = detail::random_tensor(rng, emb, emb, 0.02);
    L.ba = detail::random_tensor(rng, 1, emb, 0.02);
    L.ln2g = detail::random_tensor(rng, 1, emb, 0.02, 1.0);
    L.ln2b = detail::random_tensor(rng, 1, emb, 0.02);
    L.wf1 = detail::random_tensor(rng, emb, ffn, 0.02);
    L.bf1 = detail::random_tensor(rng, 1, ffn, 0.02);
    L.wf2 = detail::random_tensor(rng, ffn, emb, 0.02);
    L.bf2 = detail::random_tensor(rng, 1, emb, 0.02);
  }
  return w;
}

namespace detail {

struct ManifestEntry {
  std::string tag;
  const TensorF16* tensor;
};

inline std::vector<ManifestEntry> manifest(const ModelWeights& w) {
  std::vector<ManifestEntry> m;
  m.push_back({"wte", &w.wte});
  m.push_back({"wpe", &w.wpe});
  for (size_t l = 0; l < w.layers.size(); ++l) {
    const LayerWeights& L = w.layers[l];
    const std::string s = "." + std::to_string(l);
    m.push_back({"ln1g" + s, &L.ln1g});
    m.push_back({"ln1b" + s, &L.ln1b});
    m.push_back({"wq" + s, &L.wq});
    m.push_back({"bq" + s, &L.bq});
    m.push_back({"wk" + s, &L.wk});
    m.push_back({"bk" + s, &L.bk});
    m.push_back({"wv" + s, &L.wv});
    m.push_back({"bv" + s, &L.bv});
    m.push_back({"wa" + s, &L.wa});
    m.push_back({"ba" + s, &L.ba});
    m.push_back({"ln2g" + s, &L.ln2g});
    m.push_back({"ln2b" + s, &L.ln2b});
    m.push_back({"wf1" + s, &L.wf1});
    m.push_back({"bf1" + s, &L.bf1});
    m.push_back({"wf2" + s, &L.wf2});
    m.push_back({"bf2" + s, &L.bf2});
  }
  return m;
}

} // namespace detail

inline std::string weight_header(const ModelWeights& w) {
  std::ostringstream h;
  const GPTConfig& c = w.cfg;
  h << "tgw1\n";
  h << "config emb=" << c.emb << " n_head=" << c.n_head << " d_head=" << c.d_head
    << " n_layer=" << c.n_layer << " vocab=" << c.vocab
    << " ffn_mult=" << c.ffn_mult << " max_seq=" << c.max_seq << "\n";
  h << "shard cores=1 core=0\n";
  for (const auto& e : detail::manifest(w))
    h << "matrix " << e.tag << " " << e.tensor->rows << " " << e.tensor->cols
      << "\n";
  h << "end\n";
  return h.str();
}

inline void save_weights(const ModelWeights& w, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const std::string header = weight_header(w);
  out.write(header.data(), std::streamsize(header.size()));
  for (const auto& e : detail::manifest(w)) {
    std::vector<unsigned char> buf(e.tensor->data.size() * 2);
    for (size_t i = 0; i < e.tensor->data.size(); ++i) {
      buf[2 * i] = e.tensor->data[i].bits & 0xFF;
      buf[2 * i + 1] = (e.tensor->data[i].bits >> 8) & 0xFF;
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              std::streamsize(buf.size()));
  }
  if (!out) throw Error("short write to '" + path + "'");
}

inline ModelWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weight file '" + path + "'");

  auto read_line = [&]() {
    std::string line;
    if (!std::getline(in, line))
      throw Error("weight file '" + path + "': truncated header");
    return line;
  };

  if (read_line() != "tgw1")
    throw Error("weight file '" + path + "': bad magic");
  const std::string cfg_line = read_line();
  if (cfg_line.rfind("config ", 0) != 0)
    throw Error("weight file '" + path + "': missing config line");
  GPTConfig cfg;
  {
    std::string spec = cfg_line.substr(7);
    for (auto& ch : spec)
      if (ch == ' ') ch = ',';
    cfg = config_for(spec);
  }
  const std::string shard_line = read_line();
  if (shard_line != "shard cores=1 core=0")
    throw Error("weight file '" + path + "': only full (unsharded) files are supported");

  ModelWeights w;
  w.cfg = cfg;
  w.layers.resize(cfg.n_layer);

  // collect declared shapes, then check them against the expected manifest
  std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> declared;
  for (;;) {
    const std::string line = read_line();
    if (line == "end") break;
    std::istringstream is(line);
    std::string kw, tag;
    int64_t rows, cols;
    if (!(is >> kw >> tag >> rows >> cols) || kw != "matrix")
      throw Error("weight file '" + path + "': bad manifest line '" + line + "'");
    declared.push_back({tag, {rows, cols}});
  }

  auto expect = detail::manifest(w);
  if (declared.size() != expect.size())
    throw Error("weight file '" + path + "': manifest entry count mismatch");

  for (size_t i = 0; i < expect.size(); ++i) {
    if (declared[i].first != expect[i].tag)
      throw Error("weight file '" + path + "': manifest order mismatch at '" +
                  declared[i].first + "'");
    auto* t = const_cast<TensorF16*>(expect[i].tensor);
    *t = TensorF16(int(declared[i].second.first), int(declared[i].second.second));
    std::vector<unsigned char> buf(t->data.size() * 2);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!in)
      throw Error("weight file '" + path + "': truncated payload at '" +
                  expect[i].tag + "'");
    for (size_t j = 0; j < t->data.size(); ++j)
      t->data[j] = Fp16::from_bits(uint16_t(buf[2 * j] | (buf[2 * j + 1] << 8)));
  }
  if (in.peek() != EOF)
    throw Error("weight file '" + path + "': trailing bytes");

  // shape sanity against the config
  const int emb = cfg.emb, ffn = cfg.ffn_dim();
  if (w.wte.rows != cfg.vocab || w.wte.cols != emb ||
      w.wpe.rows != cfg.max_seq || w.wpe.cols != emb)
    throw Error("weight file '" + path + "': embedding shapes do not match config");
  for (const LayerWeights& L : w.layers)
    if (L.wq.rows != emb || L.wq.cols != emb || L.wf1.cols != ffn ||
        L.wf2.rows != ffn || L.wf2.cols != emb)
      throw Error("weight file '" + path + "': layer shapes do not match config");
  return w;
}

} // namespace tgsim

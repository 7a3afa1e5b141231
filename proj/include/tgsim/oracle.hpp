#pragma once

// Independent reference implementation of the model in FP32 dense
// linear algebra, plus exact-function oracles for equivalence tests.
// This header deliberately stays clear of the instruction-set,
// function-unit and memory-model headers; it shares only the plain
// data types (config, tensors, weights).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tgsim/config.hpp"
#include "tgsim/fp16.hpp"
#include "tgsim/tensor.hpp"
#include "tgsim/weights.hpp"

namespace tgsim::oracle {

// Exact tanh-form activation, evaluated in binary64.
inline double gelu_exact(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846264338327950288);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

namespace detail {

inline std::vector<float> to_f32(const TensorF16& t) {
  std::vector<float> out(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) out[i] = t.data[i].to_float();
  return out;
}

} // namespace detail

// Per-layer K/V context in FP32, one flat row list per (layer, head).
struct RefKV {
  int n_layer = 0, n_head = 0, d_head = 0;
  std::vector<std::vector<float>> k, v; // rows appended in token order

  RefKV() = default;
  RefKV(int layers, int heads, int dh)
      : n_layer(layers), n_head(heads), d_head(dh),
        k(size_t(layers) * heads), v(size_t(layers) * heads) {}

  size_t slot(int layer, int head) const {
    return size_t(layer) * n_head + head;
  }
  int rows(int layer, int head) const {
    return int(k[slot(layer, head)].size()) / d_head;
  }
  void clear() {
    for (auto& r : k) r.clear();
    for (auto& r : v) r.clear();
  }
};

struct RefLayerF32 {
  // row-major, rows = input dim
  std::vector<float> ln1g, ln1b, wq, bq, wk, bk, wv, bv, wa, ba;
  std::vector<float> ln2g, ln2b, wf1, bf1, wf2, bf2;
};

// y = x^T A + b for row-major A (in_dim x out_dim)
inline std::vector<float> affine(const std::vector<float>& x,
                                 const std::vector<float>& A,
                                 const std::vector<float>& b, int in_dim,
                                 int out_dim) {
  std::vector<float> y(size_t(out_dim), 0.0f);
  for (int i = 0; i < in_dim; ++i) {
    const float xi = x[size_t(i)];
    const float* row = A.data() + size_t(i) * out_dim;
    for (int j = 0; j < out_dim; ++j) y[size_t(j)] += xi * row[j];
  }
  if (!b.empty())
    for (int j = 0; j < out_dim; ++j) y[size_t(j)] += b[size_t(j)];
  return y;
}

inline std::vector<float> layernorm(const std::vector<float>& x,
                                    const std::vector<float>& g,
                                    const std::vector<float>& b,
                                    float eps = 1e-5f) {
  const size_t n = x.size();
  float mu = 0;
  for (float v : x) mu += v;
  mu /= float(n);
  float var = 0;
  for (float v : x) var += (v - mu) * (v - mu);
  var /= float(n);
  const float rstd = 1.0f / std::sqrt(var + eps);
  std::vector<float> y(n);
  for (size_t i = 0; i < n; ++i) y[i] = g[i] * (x[i] - mu) * rstd + b[i];
  return y;
}

inline void softmax_inplace(std::vector<float>& x) {
  float m = x[0];
  for (float v : x) m = std::max(m, v);
  float s = 0;
  for (float& v : x) {
    v = std::exp(v - m);
    s += v;
  }
  for (float& v : x) v /= s;
}

// One decoder layer for a single token vector; appends this token's
// K/V to the context before attending (causal: the token sees the
// prior context and itself).
inline std::vector<float> ref_decoder_layer(const std::vector<float>& x,
                                            const RefLayerF32& L, RefKV& kv,
                                            int layer, int emb, int n_head,
                                            int d_head) {
  const std::vector<float> ln1 = layernorm(x, L.ln1g, L.ln1b);
  const std::vector<float> vvec = affine(ln1, L.wv, L.bv, emb, emb);
  const std::vector<float> kvec = affine(ln1, L.wk, L.bk, emb, emb);
  const std::vector<float> qvec = affine(ln1, L.wq, L.bq, emb, emb);

  std::vector<float> attn(size_t(emb), 0.0f);
  const float scale = 1.0f / std::sqrt(float(d_head));
  for (int h = 0; h < n_head; ++h) {
    auto& krows = kv.k[kv.slot(layer, h)];
    auto& vrows = kv.v[kv.slot(layer, h)];
    krows.insert(krows.end(), kvec.begin() + h * d_head,
                 kvec.begin() + (h + 1) * d_head);
    vrows.insert(vrows.end(), vvec.begin() + h * d_head,
                 vvec.begin() + (h + 1) * d_head);
    const int t = kv.rows(layer, h);

    std::vector<float> score(size_t(t), 0.0f);
    for (int i = 0; i < t; ++i) {
      float dot = 0;
      for (int c = 0; c < d_head; ++c)
        dot += qvec[size_t(h * d_head + c)] * krows[size_t(i) * d_head + c];
      score[size_t(i)] = dot * scale;
    }
    softmax_inplace(score);
    for (int c = 0; c < d_head; ++c) {
      float acc = 0;
      for (int i = 0; i < t; ++i)
        acc += score[size_t(i)] * vrows[size_t(i) * d_head + c];
      attn[size_t(h * d_head + c)] = acc;
    }
  }

  std::vector<float> c_attn = affine(attn, L.wa, L.ba, emb, emb);
  for (int i = 0; i < emb; ++i) c_attn[size_t(i)] += x[size_t(i)];

  const std::vector<float> ln2 = layernorm(c_attn, L.ln2g, L.ln2b);
  std::vector<float> f1 = affine(ln2, L.wf1, L.bf1, emb, int(L.bf1.size()));
  for (float& v : f1) v = float(gelu_exact(double(v)));
  const std::vector<float> f2 = affine(f1, L.wf2, L.bf2, int(f1.size()), emb);

  std::vector<float> out(size_t(emb), 0.0f);
  for (int i = 0; i < emb; ++i) out[size_t(i)] = f2[size_t(i)] + c_attn[size_t(i)];
  return out;
}

// Greedy choice on raw logits; ties take the lowest token id.
inline int greedy_argmax(const std::vector<float>& logits) {
  int best = 0;
  for (int i = 1; i < int(logits.size()); ++i)
    if (logits[size_t(i)] > logits[size_t(best)]) best = i;
  return best;
}

class RefModel {
 public:
  explicit RefModel(const ModelWeights& w) : cfg_(w.cfg) {
    wte_ = detail::to_f32(w.wte);
    wpe_ = detail::to_f32(w.wpe);
    layers_.resize(w.layers.size());
    for (size_t l = 0; l < w.layers.size(); ++l) {
      const LayerWeights& L = w.layers[l];
      RefLayerF32& R = layers_[l];
      R.ln1g = detail::to_f32(L.ln1g); R.ln1b = detail::to_f32(L.ln1b);
      R.wq = detail::to_f32(L.wq); R.bq = detail::to_f32(L.bq);
      R.wk = detail::to_f32(L.wk); R.bk = detail::to_f32(L.bk);
      R.wv = detail::to_f32(L.wv); R.bv = detail::to_f32(L.bv);
      R.wa = detail::to_f32(L.wa); R.ba = detail::to_f32(L.ba);
      R.ln2g = detail::to_f32(L.ln2g); R.ln2b = detail::to_f32(L.ln2b);
      R.wf1 = detail::to_f32(L.wf1); R.bf1 = detail::to_f32(L.bf1);
      R.wf2 = detail::to_f32(L.wf2); R.bf2 = detail::to_f32(L.bf2);
    }
    reset();
  }

  const GPTConfig& cfg() const { return cfg_; }

  void reset() {
    kv_ = RefKV(cfg_.n_layer, cfg_.n_head, cfg_.d_head);
    pos_ = 0;
  }

  struct StepTrace {
    std::vector<std::vector<float>> layer_in;  // per layer, emb wide
    std::vector<std::vector<float>> layer_out;
    std::vector<float> logits;
    int greedy = 0;
    float top1 = 0, top2 = 0; // two largest logits
  };

  // Process one (teacher-forced) token at the current position.
  StepTrace step(int token_id) {
    if (token_id < 0 || token_id >= cfg_.vocab)
      throw Error("oracle: token id out of range");
    if (pos_ >= cfg_.max_seq) throw Error("oracle: sequence length overflow");
    StepTrace tr;
    std::vector<float> x(size_t(cfg_.emb), 0.0f);
    for (int i = 0; i < cfg_.emb; ++i)
      x[size_t(i)] = wte_[size_t(token_id) * cfg_.emb + i] +
                     wpe_[size_t(pos_) * cfg_.emb + i];
    for (int l = 0; l < cfg_.n_layer; ++l) {
      tr.layer_in.push_back(x);
      x = ref_decoder_layer(x, layers_[size_t(l)], kv_, l, cfg_.emb,
                            cfg_.n_head, cfg_.d_head);
      tr.layer_out.push_back(x);
    }
    tr.logits.assign(size_t(cfg_.vocab), 0.0f);
    for (int t = 0; t < cfg_.vocab; ++t) {
      float dot = 0;
      for (int i = 0; i < cfg_.emb; ++i)
        dot += x[size_t(i)] * wte_[size_t(t) * cfg_.emb + i];
      tr.logits[size_t(t)] = dot;
    }
    tr.greedy = greedy_argmax(tr.logits);
    tr.top1 = tr.logits[size_t(tr.greedy)];
    tr.top2 = -std::numeric_limits<float>::infinity();
    for (int t = 0; t < cfg_.vocab; ++t)
      if (t != tr.greedy) tr.top2 = std::max(tr.top2, tr.logits[size_t(t)]);
    ++pos_;
    return tr;
  }

  // Free-running greedy decode: n_out tokens, the first produced from
  // the last input token's pass.
  TokenSeq generate(const TokenSeq& input, int n_out) {
    if (input.ids.empty() || n_out < 1)
      throw Error("oracle: need at least one input and one output token");
    if (int(input.ids.size()) + n_out > cfg_.max_seq)
      throw Error("oracle: sequence length overflow");
    reset();
    input.validate(cfg_);
    TokenSeq out;
    int next = 0;
    for (int32_t id : input.ids) next = step(id).greedy;
    out.ids.push_back(next);
    for (int g = 1; g < n_out; ++g) {
      next = step(next).greedy;
      out.ids.push_back(next);
    }
    return out;
  }

 private:
  GPTConfig cfg_;
  std::vector<float> wte_, wpe_;
  std::vector<RefLayerF32> layers_;
  RefKV kv_;
  int pos_ = 0;
};

// ---------------------------------------------------------------------------
// Elementwise comparison: ulp-distance histogram against a declared
// tolerance. The distance is the strict binary16 rank distance, except
// that absolute deviations below tol * ulp(max |ref|) count as equal:
// shared statistics (mean, 1/sigma, softmax sums) pass through single
// FP16 registers, so near-cancelled elements of any FP16 pipeline carry
// deviations at the tensor's working scale, not at their own tiny
// exponent. Measuring those in local ulps would reject every possible
// FP16 implementation.

struct CompareReport {
  int64_t count = 0;
  int32_t max_ulp = 0;
  int64_t worst_index = -1;
  std::array<int64_t, 5> histogram{}; // <=0, <=1, <=2, <=4, >4
  bool pass = true;
  double floor = 0;

  void add(int64_t index, int32_t ulp) {
    ++count;
    if (ulp > max_ulp) {
      max_ulp = ulp;
      worst_index = index;
    }
    if (ulp <= 0) ++histogram[0];
    else if (ulp <= 1) ++histogram[1];
    else if (ulp <= 2) ++histogram[2];
    else if (ulp <= 4) ++histogram[3];
    else ++histogram[4];
  }
};

inline CompareReport compare(std::span<const Fp16> sim,
                             std::span<const float> ref, int32_t ulp_tol,
                             bool use_noise_floor = true) {
  if (sim.size() != ref.size()) throw Error("compare: shape mismatch");
  CompareReport rep;
  double ref_max = 0;
  for (float v : ref) ref_max = std::max(ref_max, double(std::abs(v)));
  rep.floor = use_noise_floor ? double(ulp_tol) * f16_ulp_at(ref_max) : 0.0;
  for (size_t i = 0; i < sim.size(); ++i) {
    const double s = sim[i].to_double();
    const double r = double(ref[i]);
    int32_t ulp;
    if (std::abs(s - r) <= rep.floor)
      ulp = 0;
    else
      ulp = f16_ulp_dist(sim[i], Fp16::from_double(r));
    rep.add(int64_t(i), ulp);
  }
  rep.pass = rep.max_ulp <= ulp_tol;
  return rep;
}

} // namespace tgsim::oracle

#pragma once

// Row-major binary16 tensors and the per-core KV cache.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "tgsim/config.hpp"
#include "tgsim/fp16.hpp"

namespace tgsim {

struct TensorF16 {
  int rows = 0;
  int cols = 0;
  std::vector<Fp16> data;

  TensorF16() = default;
  TensorF16(int r, int c) : rows(r), cols(c), data(size_t(r) * c) {}

  Fp16& at(int r, int c) { return data[size_t(r) * cols + c]; }
  Fp16 at(int r, int c) const { return data[size_t(r) * cols + c]; }

  bool operator==(const TensorF16&) const = default;
};

// Key and transposed Value, per (layer, head). Key rows append in token
// order; Value appends as columns of the stored transpose, so the
// backing layout of both is one contiguous d_head-sized slab per token.
class KVCache {
 public:
  KVCache() = default;
  KVCache(int n_layer, int n_head, int d_head, int max_seq)
      : n_layer_(n_layer), n_head_(n_head), d_head_(d_head),
        max_seq_(max_seq), k_(size_t(n_layer) * n_head),
        v_(size_t(n_layer) * n_head), krows_(size_t(n_layer) * n_head, 0),
        vcols_(size_t(n_layer) * n_head, 0) {}

  // Token rows fully present (both key and value sides).
  int rows(int layer, int head) const {
    return std::min(krows_[slot(layer, head)], vcols_[slot(layer, head)]);
  }
  int key_rows(int layer, int head) const { return krows_[slot(layer, head)]; }
  int value_cols(int layer, int head) const { return vcols_[slot(layer, head)]; }
  int d_head() const { return d_head_; }

  // The dataflow writes Value before Key, so the two sides append
  // independently; they must agree again by the end of each pass.
  void append_value(int layer, int head, const std::vector<Fp16>& v_row) {
    check_row(v_row, vcols_[slot(layer, head)]);
    auto& v = v_[slot(layer, head)];
    v.insert(v.end(), v_row.begin(), v_row.end());
    ++vcols_[slot(layer, head)];
  }
  void append_key(int layer, int head, const std::vector<Fp16>& k_row) {
    check_row(k_row, krows_[slot(layer, head)]);
    auto& k = k_[slot(layer, head)];
    k.insert(k.end(), k_row.begin(), k_row.end());
    ++krows_[slot(layer, head)];
  }
  void append(int layer, int head, const std::vector<Fp16>& k_row,
              const std::vector<Fp16>& v_row) {
    append_value(layer, head, v_row);
    append_key(layer, head, k_row);
  }

  // key[r, c], r in [0, rows), c in [0, d_head)
  Fp16 key_at(int layer, int head, int r, int c) const {
    return k_[slot(layer, head)][size_t(r) * d_head_ + c];
  }
  // value_t[r, c], r in [0, d_head), c in [0, rows)
  Fp16 value_t_at(int layer, int head, int r, int c) const {
    return v_[slot(layer, head)][size_t(c) * d_head_ + r];
  }

  TensorF16 key(int layer, int head) const {
    const int t = rows(layer, head);
    TensorF16 m(t, d_head_);
    m.data = k_[slot(layer, head)];
    return m;
  }
  TensorF16 value_t(int layer, int head) const {
    const int t = rows(layer, head);
    TensorF16 m(d_head_, t);
    for (int r = 0; r < d_head_; ++r)
      for (int c = 0; c < t; ++c) m.at(r, c) = value_t_at(layer, head, r, c);
    return m;
  }

 private:
  size_t slot(int layer, int head) const {
    return size_t(layer) * n_head_ + head;
  }
  void check_row(const std::vector<Fp16>& row, int count) const {
    if (int(row.size()) != d_head_)
      throw Error("kv append: row width must equal d_head");
    if (count >= max_seq_)
      throw Error("kv append: sequence length overflow at max_seq=" +
                  std::to_string(max_seq_));
  }

  int n_layer_ = 0, n_head_ = 0, d_head_ = 0, max_seq_ = 0;
  std::vector<std::vector<Fp16>> k_, v_;
  std::vector<int> krows_, vcols_;
};

} // namespace tgsim

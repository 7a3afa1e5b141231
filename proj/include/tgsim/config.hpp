#pragma once

// Model configuration and token sequences.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgsim {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GPTConfig {
  int emb = 0;      // embedding dimension, elements
  int n_head = 0;   // attention heads
  int d_head = 0;   // head dimension, elements
  int n_layer = 0;  // decoder layers
  int vocab = 0;    // vocabulary size
  int ffn_mult = 4; // FFN inner dimension = ffn_mult * emb
  int max_seq = 1024;

  int ffn_dim() const { return ffn_mult * emb; }

  void validate() const {
    if (emb <= 0 || n_head <= 0 || d_head <= 0)
      throw Error("config: emb, n_head and d_head must be positive");
    if (emb % n_head != 0)
      throw Error("config: emb not divisible by n_head");
    if (emb != n_head * d_head)
      throw Error("config: emb must equal n_head * d_head");
    if (n_layer < 1) throw Error("config: n_layer must be >= 1");
    if (vocab < 2) throw Error("config: vocab must be >= 2");
    if (max_seq < 1) throw Error("config: max_seq must be >= 1");
    if (ffn_mult < 1) throw Error("config: ffn_mult must be >= 1");
  }

  bool operator==(const GPTConfig&) const = default;
};

namespace detail {

inline GPTConfig parse_config_literal(const std::string& name) {
  // "emb=128,n_head=2,n_layer=2,vocab=512[,d_head=..][,max_seq=..][,ffn_mult=..]"
  GPTConfig c;
  c.d_head = 64;
  size_t pos = 0;
  while (pos < name.size()) {
    size_t end = name.find(',', pos);
    if (end == std::string::npos) end = name.size();
    const std::string kv = name.substr(pos, end - pos);
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw Error("config literal: expected key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    int value;
    try {
      value = std::stoi(kv.substr(eq + 1));
    } catch (const std::exception&) {
      throw Error("config literal: bad integer in '" + kv + "'");
    }
    if (key == "emb") c.emb = value;
    else if (key == "n_head") c.n_head = value;
    else if (key == "d_head") c.d_head = value;
    else if (key == "n_layer") c.n_layer = value;
    else if (key == "vocab") c.vocab = value;
    else if (key == "ffn_mult") c.ffn_mult = value;
    else if (key == "max_seq") c.max_seq = value;
    else throw Error("config literal: unknown key '" + key + "'");
    pos = end + 1;
  }
  c.validate();
  return c;
}

} // namespace detail

// Named presets, or a custom "key=value,..." literal.
inline GPTConfig config_for(const std::string& name) {
  if (name == "345M") return {1024, 16, 64, 24, 50257, 4, 1024};
  if (name == "774M") return {1280, 20, 64, 36, 50257, 4, 1024};
  if (name == "1.5B") return {1536, 24, 64, 48, 50257, 4, 1024};
  if (name == "tiny") return {128, 2, 64, 2, 512, 4, 256};
  if (name.find('=') != std::string::npos)
    return detail::parse_config_literal(name);
  throw Error("unknown preset '" + name + "'");
}

struct TokenSeq {
  std::vector<int32_t> ids;

  void validate(const GPTConfig& cfg) const {
    for (int32_t id : ids)
      if (id < 0 || id >= cfg.vocab)
        throw Error("token id " + std::to_string(id) + " out of range [0, " +
                    std::to_string(cfg.vocab) + ")");
  }

  bool operator==(const TokenSeq&) const = default;
};

} // namespace tgsim

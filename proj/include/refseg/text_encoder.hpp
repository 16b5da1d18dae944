#pragma once

// Mini transformer text encoder. Produces per-token local features plus
// the EOS hidden state as the global sentence feature; padded keys are
// masked out of attention so outputs do not depend on padding length.

#include "refseg/nn.hpp"
#include "refseg/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace refseg {

struct TextFeatures {
  Tensor t_local;               // [L, d1], word + pad rows in order
  Tensor t_global;              // [1, d1], hidden state at the EOS position
  std::vector<bool> pad_mask;   // length L, true where the row is padding
};

class TextEncoder {
 public:
  struct Config {
    int vocab_size = 0;
    int dim = 64;
    int layers = 2;
    int heads = 4;
    int max_len = 16;  // L + 1
  };

  TextEncoder() = default;
  TextEncoder(const Config& cfg, std::mt19937& rng) : cfg_(cfg) {
    token_emb_ = EmbeddingT<float>(cfg.vocab_size, cfg.dim, rng);
    pos_emb_ = Tensor::randn({cfg.max_len, cfg.dim}, rng, 0.02f, true);
    for (int i = 0; i < cfg.layers; ++i) blocks_.emplace_back(cfg.dim, cfg.heads, rng);
    final_ln_ = LayerNormT<float>(cfg.dim);
  }

  // All hidden states, one row per input position. Accepts sequences up
  // to max_len so padding-invariance is directly observable.
  Tensor encode_hidden(const std::vector<int>& ids, const std::vector<bool>& pad_mask) const {
    if (ids.size() != pad_mask.size())
      throw std::invalid_argument("encode_text: ids and pad mask lengths differ");
    const int n = static_cast<int>(ids.size());
    if (n < 1 || n > cfg_.max_len)
      throw std::invalid_argument("encode_text: sequence length " + std::to_string(n) +
                                  " outside [1, " + std::to_string(cfg_.max_len) + "]");
    bool any_real = false;
    for (bool p : pad_mask) any_real = any_real || !p;
    if (!any_real) throw std::invalid_argument("encode_text: all positions padded");

    auto x = add(token_emb_.forward(ids), slice_rows(pos_emb_, 0, n));
    for (const auto& blk : blocks_) x = blk.forward(x, &pad_mask);
    return final_ln_.forward(x);
  }

  TextFeatures encode(const std::vector<int>& ids, const std::vector<bool>& pad_mask) const {
    auto hidden = encode_hidden(ids, pad_mask);
    const int n = static_cast<int>(ids.size());
    int eos_idx = -1;
    for (int i = n - 1; i >= 0; --i)
      if (!pad_mask[static_cast<size_t>(i)]) {
        eos_idx = i;
        break;
      }
    TextFeatures out;
    out.t_global = slice_rows(hidden, eos_idx, eos_idx + 1);
    std::vector<int> local_idx;
    local_idx.reserve(static_cast<size_t>(n - 1));
    for (int i = 0; i < n; ++i)
      if (i != eos_idx) {
        local_idx.push_back(i);
        out.pad_mask.push_back(pad_mask[static_cast<size_t>(i)]);
      }
    out.t_local = local_idx.empty() ? Tensor::zeros({0, cfg_.dim})
                                    : gather_rows(hidden, local_idx);
    return out;
  }

  void collect(const std::string& prefix, NamedTensors<float>& out) const {
    token_emb_.collect(prefix + ".token_emb", out);
    out.param(prefix + ".pos_emb", pos_emb_);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".layer" + std::to_string(i), out);
    final_ln_.collect(prefix + ".final_ln", out);
  }

  // depth: number of leading layers that get adapters.
  void add_adapters(int depth, int rank, std::mt19937& rng) {
    depth = std::min(depth, static_cast<int>(blocks_.size()));
    for (int i = 0; i < depth; ++i) blocks_[static_cast<size_t>(i)].add_adapters(rank, rng);
  }
  int adapter_layer_count() const {
    int n = 0;
    for (const auto& b : blocks_) n += b.has_adapters() ? 1 : 0;
    return n;
  }

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  EmbeddingT<float> token_emb_;
  Tensor pos_emb_;
  std::vector<TransformerBlockT<float>> blocks_;
  LayerNormT<float> final_ln_;
};

}  // namespace refseg

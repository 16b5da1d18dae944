#pragma once

// Prompt-conditioned mask decoding: learnable mask tokens joined with the
// sparse prompt tokens run two rounds of two-way attention against the
// image embedding; each mask token dots against a 4x-upscaled embedding to
// produce a candidate mask, and the first candidate is the output.

#include "refseg/image.hpp"
#include "refseg/nn.hpp"
#include "refseg/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace refseg {

// Embeds the dense coarse-mask prompt and adds it to the image embedding.
// Biases are zero at init so an all-zero prompt leaves the embedding
// untouched.
class DensePromptStem {
 public:
  DensePromptStem() = default;
  DensePromptStem(int dim, std::mt19937& rng)
      : conv1_(1, dim, 3, 1, 1, rng), conv2_(dim, dim, 3, 1, 1, rng) {}

  Tensor embed(const Tensor& p_dense) const { return conv2_.forward(gelu(conv1_.forward(p_dense))); }

  // e {h,w,d} + stem(p_dense {h,w,1})
  Tensor inject(const Tensor& e, const Tensor& p_dense) const {
    check_grid(e, "inject_dense");
    check_grid(p_dense, "inject_dense");
    if (p_dense.dim(0) != e.dim(0) || p_dense.dim(1) != e.dim(1))
      throw std::invalid_argument("inject_dense: prompt grid " + std::to_string(p_dense.dim(0)) +
                                  "x" + std::to_string(p_dense.dim(1)) + " vs embedding " +
                                  std::to_string(e.dim(0)) + "x" + std::to_string(e.dim(1)));
    return add(e, embed(p_dense));
  }

  void collect(const std::string& prefix, NamedTensors<float>& out) const {
    conv1_.collect(prefix + ".conv1", out);
    conv2_.collect(prefix + ".conv2", out);
  }

 private:
  Conv2dT<float> conv1_, conv2_;
};

struct MaskPrediction {
  int h = 0, w = 0;
  std::vector<float> logits;  // row-major h*w at ground-truth resolution
  MaskU8 mask;                // logits > 0
  int num_candidates = 0;
};

class MaskDecoder {
 public:
  struct Config {
    int dim = 64;         // d2; must be divisible by 4 for the upscaler
    int mask_tokens = 3;  // candidate masks; the first one is selected
    int rounds = 2;
    int heads = 4;
  };

  MaskDecoder() = default;
  MaskDecoder(const Config& cfg, std::mt19937& rng) : cfg_(cfg) {
    if (cfg.dim % 4 != 0) throw std::invalid_argument("mask decoder: dim must be divisible by 4");
    if (cfg.mask_tokens < 1) throw std::invalid_argument("mask decoder: need at least one mask token");
    mask_tokens_ = Tensor::randn({cfg.mask_tokens, cfg.dim}, rng, 0.02f, true);
    for (int i = 0; i < cfg.rounds; ++i) rounds_.emplace_back(cfg.dim, cfg.heads, rng);
    final_token_to_image_ = MultiheadAttentionT<float>(cfg.dim, cfg.heads, rng);
    final_ln_ = LayerNormT<float>(cfg.dim);
    up1_ = ConvTranspose2x2T<float>(cfg.dim, cfg.dim / 2, rng);
    up2_ = ConvTranspose2x2T<float>(cfg.dim / 2, cfg.dim / 4, rng);
    hyper_fc1_ = LinearT<float>(cfg.dim, cfg.dim, rng);
    hyper_fc2_ = LinearT<float>(cfg.dim, cfg.dim / 4, rng);
    // learnable logit offset, started at the typical foreground prior so
    // early training spends its gradient on discrimination instead of on
    // suppressing the background
    mask_bias_ = Tensor::filled({1}, -2.0f, true);
  }

  struct Result {
    std::vector<Tensor> candidates;  // each {4h, 4w, 1} logits
    Tensor selected;                 // {gt_h, gt_w, 1} logits, first candidate upsampled
    int num_candidates = 0;
  };

  // image_embedding {h,w,dim}; p_sparse [M,dim]; output at (gt_h, gt_w).
  Result decode(const Tensor& image_embedding, const Tensor& p_sparse, int gt_h, int gt_w) const {
    check_grid(image_embedding, "decode");
    if (image_embedding.dim(2) != cfg_.dim)
      throw std::invalid_argument("decode: embedding channels " +
                                  std::to_string(image_embedding.dim(2)) + " vs " +
                                  std::to_string(cfg_.dim));
    if (p_sparse.cols() != cfg_.dim)
      throw std::invalid_argument("decode: sparse prompt dim " + std::to_string(p_sparse.cols()) +
                                  " vs " + std::to_string(cfg_.dim));
    const int h = image_embedding.dim(0), w = image_embedding.dim(1);
    auto image = reshape(image_embedding, {h * w, cfg_.dim});
    auto tokens = concat_rows<float>({mask_tokens_, p_sparse});
    for (const auto& r : rounds_) {
      tokens = r.ln1.forward(add(tokens, r.self_attn.forward(tokens, tokens)));
      tokens = r.ln2.forward(add(tokens, r.token_to_image.forward(tokens, image)));
      tokens = r.ln3.forward(add(tokens, r.fc2.forward(gelu(r.fc1.forward(tokens)))));
      image = r.ln4.forward(add(image, r.image_to_token.forward(image, tokens)));
    }
    tokens = final_ln_.forward(add(tokens, final_token_to_image_.forward(tokens, image)));

    auto up = gelu(up2_.forward(gelu(up1_.forward(reshape(image, {h, w, cfg_.dim})))));
    auto up_flat = reshape(up, {4 * h * 4 * w, cfg_.dim / 4});
    auto mask_embed = hyper_fc2_.forward(gelu(hyper_fc1_.forward(
        slice_rows(tokens, 0, cfg_.mask_tokens))));  // [K, dim/4]

    Result res;
    res.num_candidates = cfg_.mask_tokens;
    for (int k = 0; k < cfg_.mask_tokens; ++k) {
      auto logits = add_row_broadcast(matmul_nt(up_flat, slice_rows(mask_embed, k, k + 1)),
                                      mask_bias_);
      res.candidates.push_back(reshape(logits, {4 * h, 4 * w, 1}));
    }
    res.selected = bilinear_resize(res.candidates[0], gt_h, gt_w);
    return res;
  }

  void collect(const std::string& prefix, NamedTensors<float>& out) const {
    out.param(prefix + ".mask_tokens", mask_tokens_);
    out.param(prefix + ".mask_bias", mask_bias_);
    for (size_t i = 0; i < rounds_.size(); ++i)
      rounds_[i].collect(prefix + ".round" + std::to_string(i), out);
    final_token_to_image_.collect(prefix + ".final_t2i", out);
    final_ln_.collect(prefix + ".final_ln", out);
    up1_.collect(prefix + ".up1", out);
    up2_.collect(prefix + ".up2", out);
    hyper_fc1_.collect(prefix + ".hyper.fc1", out);
    hyper_fc2_.collect(prefix + ".hyper.fc2", out);
  }

  const Config& config() const { return cfg_; }

 private:
  struct Round {
    Round(int dim, int heads, std::mt19937& rng)
        : self_attn(dim, heads, rng), token_to_image(dim, heads, rng),
          image_to_token(dim, heads, rng), fc1(dim, 4 * dim, rng), fc2(4 * dim, dim, rng),
          ln1(dim), ln2(dim), ln3(dim), ln4(dim) {}
    MultiheadAttentionT<float> self_attn, token_to_image, image_to_token;
    LinearT<float> fc1, fc2;
    LayerNormT<float> ln1, ln2, ln3, ln4;

    void collect(const std::string& prefix, NamedTensors<float>& out) const {
      self_attn.collect(prefix + ".self_attn", out);
      token_to_image.collect(prefix + ".t2i", out);
      image_to_token.collect(prefix + ".i2t", out);
      fc1.collect(prefix + ".mlp.fc1", out);
      fc2.collect(prefix + ".mlp.fc2", out);
      ln1.collect(prefix + ".ln1", out);
      ln2.collect(prefix + ".ln2", out);
      ln3.collect(prefix + ".ln3", out);
      ln4.collect(prefix + ".ln4", out);
    }
  };

  Config cfg_;
  Tensor mask_tokens_;
  Tensor mask_bias_;
  std::vector<Round> rounds_;
  MultiheadAttentionT<float> final_token_to_image_;
  LayerNormT<float> final_ln_;
  ConvTranspose2x2T<float> up1_, up2_;
  LinearT<float> hyper_fc1_, hyper_fc2_;
};

}  // namespace refseg

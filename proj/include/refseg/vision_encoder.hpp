#pragma once

// ViT-style encoder that keeps the patch grid: patch embedding, learned
// positional embedding, transformer blocks, no pooling and no class
// token. Used at low resolution for text-filtered features and at high
// resolution for the promptable mask generator.

#include "refseg/image.hpp"
#include "refseg/nn.hpp"
#include "refseg/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace refseg {

class VisionEncoder {
 public:
  struct Config {
    int input_size = 384;
    int patch_size = 16;
    int dim = 64;
    int layers = 2;
    int heads = 4;
  };

  VisionEncoder() = default;
  VisionEncoder(const Config& cfg, std::mt19937& rng) : cfg_(cfg) {
    if (cfg.input_size % cfg.patch_size != 0)
      throw std::invalid_argument("vision encoder: input size " + std::to_string(cfg.input_size) +
                                  " not divisible by patch size " + std::to_string(cfg.patch_size));
    grid_ = cfg.input_size / cfg.patch_size;
    patch_proj_ = LinearT<float>(cfg.patch_size * cfg.patch_size * 3, cfg.dim, rng);
    pos_emb_ = Tensor::randn({grid_ * grid_, cfg.dim}, rng, 0.02f, true);
    for (int i = 0; i < cfg.layers; ++i) blocks_.emplace_back(cfg.dim, cfg.heads, rng);
    final_ln_ = LayerNormT<float>(cfg.dim);
  }

  // Image must be RGB at exactly the configured input size.
  Tensor encode(const ImageF& image) const {
    if (image.ch != 3) throw std::invalid_argument("encode_image: expected RGB input");
    if (image.h % cfg_.patch_size != 0 || image.w % cfg_.patch_size != 0)
      throw std::invalid_argument("encode_image: dims " + std::to_string(image.h) + "x" +
                                  std::to_string(image.w) + " not divisible by patch size " +
                                  std::to_string(cfg_.patch_size));
    if (image.h != cfg_.input_size || image.w != cfg_.input_size)
      throw std::invalid_argument("encode_image: input " + std::to_string(image.h) + "x" +
                                  std::to_string(image.w) + " differs from configured " +
                                  std::to_string(cfg_.input_size));
    auto pixels = Tensor::from_vec({image.h, image.w, 3},
                                   std::vector<float>(image.data.begin(), image.data.end()));
    return encode_patches(im2col(pixels, cfg_.patch_size, cfg_.patch_size, cfg_.patch_size, 0));
  }

  // patches: [grid*grid, patch*patch*3] rows in row-major grid order.
  Tensor encode_patches(const Tensor& patches) const {
    if (patches.rows() != grid_ * grid_)
      throw std::invalid_argument("encode_image: patch count mismatch");
    auto x = add(patch_proj_.forward(patches), pos_emb_);
    for (const auto& blk : blocks_) x = blk.forward(x);
    return reshape(final_ln_.forward(x), {grid_, grid_, cfg_.dim});
  }

  void collect(const std::string& prefix, NamedTensors<float>& out) const {
    patch_proj_.collect(prefix + ".patch_proj", out);
    out.param(prefix + ".pos_emb", pos_emb_);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".layer" + std::to_string(i), out);
    final_ln_.collect(prefix + ".final_ln", out);
  }

  void add_adapters(int rank, std::mt19937& rng) {
    for (auto& blk : blocks_) blk.add_adapters(rank, rng);
  }
  int adapter_layer_count() const {
    int n = 0;
    for (const auto& b : blocks_) n += b.has_adapters() ? 1 : 0;
    return n;
  }

  int grid_size() const { return grid_; }
  const Config& config() const { return cfg_; }
  Tensor& pos_embedding() { return pos_emb_; }

 private:
  Config cfg_;
  int grid_ = 0;
  LinearT<float> patch_proj_;
  Tensor pos_emb_;
  std::vector<TransformerBlockT<float>> blocks_;
  LayerNormT<float> final_ln_;
};

}  // namespace refseg

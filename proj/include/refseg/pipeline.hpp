#pragma once

// Full referring-segmentation model: frozen dual encoders with low-rank
// adapters, the attention prompter, and the prompt-conditioned mask
// generator. Base encoder weights stay frozen; adapters, prompter and
// decoder train.

#include "refseg/data.hpp"
#include "refseg/mask_decoder.hpp"
#include "refseg/nn.hpp"
#include "refseg/prompter.hpp"
#include "refseg/text_encoder.hpp"
#include "refseg/vision_encoder.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace refseg {

struct ModelConfig {
  int vocab_size = 0;

  int d1 = 64;  // text/low-res visual width
  int d2 = 64;  // prompt/high-res width; divisible by 4

  int text_layers = 2;
  int text_heads = 4;
  int max_len = 16;

  int input_low = 384;
  int patch_low = 16;
  int image_layers = 2;
  int image_heads = 4;

  int input_high = 1024;
  int patch_high = 16;
  int highres_layers = 2;
  int highres_heads = 4;

  int downsample = 4;
  bool dense_prompt = true;

  int mask_tokens = 3;
  int decoder_rounds = 2;
  int decoder_heads = 4;

  int lora_rank = 16;
  std::string text_lora_depth = "full";  // zero | half | full
  bool image_lora = true;
  bool highres_lora = true;
  bool decoder_trainable = true;

  // Replaces text conditioning with a fixed vector; baseline for showing
  // that the referring signal, not image statistics, drives the mask.
  bool text_conditioning_constant = false;

  void validate() const {
    if (vocab_size < 3) throw std::invalid_argument("config: vocab_size must cover the specials");
    if (d1 < 1 || d2 < 1) throw std::invalid_argument("config: widths must be positive");
    if (d2 % 4 != 0) throw std::invalid_argument("config: d2 must be divisible by 4");
    if (d1 % text_heads != 0 || d1 % image_heads != 0)
      throw std::invalid_argument("config: d1 must be divisible by the encoder head counts");
    if (d2 % highres_heads != 0 || d2 % decoder_heads != 0)
      throw std::invalid_argument("config: d2 must be divisible by the decoder head counts");
    if (input_low >= input_high)
      throw std::invalid_argument("config: low-res input must be smaller than high-res input");
    if (input_low % patch_low != 0 || input_high % patch_high != 0)
      throw std::invalid_argument("config: input sizes must be divisible by patch sizes");
    if (downsample != 2 && downsample != 4 && downsample != 8)
      throw std::invalid_argument("config: downsample must be 2, 4 or 8");
    if ((input_low / patch_low) % downsample != 0)
      throw std::invalid_argument("config: low-res grid not divisible by downsample");
    if (text_lora_depth != "zero" && text_lora_depth != "half" && text_lora_depth != "full")
      throw std::invalid_argument("config: text_lora_depth must be zero, half or full");
    if (lora_rank < 1) throw std::invalid_argument("config: lora_rank must be >= 1");
    if (max_len < 2) throw std::invalid_argument("config: max_len must be >= 2");
  }
};

struct ParamPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
};

class ReferringSegModel {
 public:
  ReferringSegModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937 rng(static_cast<uint32_t>(seed ^ 0x9e3779b9u));

    text_ = TextEncoder({cfg_.vocab_size, cfg_.d1, cfg_.text_layers, cfg_.text_heads, cfg_.max_len},
                        rng);
    lowres_ = VisionEncoder(
        {cfg_.input_low, cfg_.patch_low, cfg_.d1, cfg_.image_layers, cfg_.image_heads}, rng);
    highres_ = VisionEncoder(
        {cfg_.input_high, cfg_.patch_high, cfg_.d2, cfg_.highres_layers, cfg_.highres_heads}, rng);
    prompter_ = AttnPrompter({cfg_.d1, cfg_.d2, cfg_.downsample}, rng);
    dense_stem_ = DensePromptStem(cfg_.d2, rng);
    decoder_ = MaskDecoder({cfg_.d2, cfg_.mask_tokens, cfg_.decoder_rounds, cfg_.decoder_heads},
                           rng);

    int text_depth = 0;
    if (cfg_.text_lora_depth == "half") text_depth = cfg_.text_layers / 2;
    if (cfg_.text_lora_depth == "full") text_depth = cfg_.text_layers;
    if (text_depth > 0) text_.add_adapters(text_depth, cfg_.lora_rank, rng);
    if (cfg_.image_lora) lowres_.add_adapters(cfg_.lora_rank, rng);
    if (cfg_.highres_lora) highres_.add_adapters(cfg_.lora_rank, rng);

    const float unit = 1.0f / std::sqrt(static_cast<float>(cfg_.d1));
    const_text_ = Tensor::filled({1, cfg_.d1}, unit);

    apply_policy();
  }

  struct ForwardResult {
    TextFeatures text;
    Tensor v;         // {h1,w1,d1}
    Tensor v_attn;    // {h1,w1,3*d1}
    Tensor p_sparse;  // [M,d2]
    Tensor p_dense;   // {h2,w2,1}; undefined when dense prompts are off
    Tensor logits;    // {gt_h,gt_w,1} selected-mask logits
    int num_candidates = 0;
  };

  ForwardResult forward(const DualResSample& sample, bool training) const {
    ForwardResult out;
    out.text = text_.encode(sample.token_ids, sample.pad_mask);

    Tensor t_global = out.text.t_global;
    Tensor t_local = out.text.t_local;
    std::vector<bool> local_pad = out.text.pad_mask;
    if (cfg_.text_conditioning_constant) {
      t_global = const_text_;
      t_local = const_text_;
      local_pad = {false};
    }

    out.v = lowres_.encode(sample.image_lowres);
    auto v_global = AttnPrompter::filter_global(out.v, t_global);
    auto v_local = AttnPrompter::filter_local(out.v, t_local, local_pad);
    out.v_attn = AttnPrompter::fuse(v_global, v_local, out.v);
    out.p_sparse = prompter_.make_sparse(out.v_attn, training);

    auto e = highres_.encode(sample.image_highres);
    if (cfg_.dense_prompt) {
      out.p_dense = AttnPrompter::make_dense(out.v, t_global, e.dim(0), e.dim(1));
      e = dense_stem_.inject(e, out.p_dense);
    }
    auto dec = decoder_.decode(e, out.p_sparse, sample.mask.h, sample.mask.w);
    out.logits = dec.selected;
    out.num_candidates = dec.num_candidates;
    return out;
  }

  MaskPrediction predict(const DualResSample& sample) const {
    NoGradGuard ng;
    auto fwd = forward(sample, /*training=*/false);
    MaskPrediction pred;
    pred.h = sample.mask.h;
    pred.w = sample.mask.w;
    pred.logits = fwd.logits.value();
    pred.mask = make_mask(pred.h, pred.w);
    for (size_t i = 0; i < pred.logits.size(); ++i)
      pred.mask.data[i] = pred.logits[i] > 0.0f ? 1 : 0;
    pred.num_candidates = fwd.num_candidates;
    return pred;
  }

  NamedTensors<float> named_tensors() const {
    NamedTensors<float> out;
    text_.collect("text_enc", out);
    lowres_.collect("lowres_enc", out);
    highres_.collect("highres_enc", out);
    prompter_.collect("prompter", out);
    dense_stem_.collect("dense_stem", out);
    decoder_.collect("decoder", out);
    out.buffer("const_text", const_text_);
    return out;
  }

  // Frozen-backbone policy: base weights never train; adapters always do;
  // prompter always does; dense stem and decoder train per flag.
  ParamPartition apply_policy() {
    ParamPartition part;
    auto named = named_tensors();
    for (auto& [name, tensor] : named.params) {
      const bool is_adapter = name.find(".lora_a") != std::string::npos ||
                              name.find(".lora_b") != std::string::npos;
      const bool is_prompter = name.rfind("prompter.", 0) == 0;
      const bool is_decoder =
          name.rfind("decoder.", 0) == 0 || name.rfind("dense_stem.", 0) == 0;
      const bool trainable = is_adapter || is_prompter || (is_decoder && cfg_.decoder_trainable);
      tensor.set_requires_grad(trainable);
      (trainable ? part.trainable : part.frozen).push_back(name);
    }
    return part;
  }

  const ModelConfig& config() const { return cfg_; }
  const TextEncoder& text_encoder() const { return text_; }
  TextEncoder& text_encoder() { return text_; }
  const VisionEncoder& lowres_encoder() const { return lowres_; }
  VisionEncoder& lowres_encoder() { return lowres_; }
  const VisionEncoder& highres_encoder() const { return highres_; }
  const AttnPrompter& prompter() const { return prompter_; }
  const DensePromptStem& dense_stem() const { return dense_stem_; }
  const MaskDecoder& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  TextEncoder text_;
  VisionEncoder lowres_;
  VisionEncoder highres_;
  AttnPrompter prompter_;
  DensePromptStem dense_stem_;
  MaskDecoder decoder_;
  Tensor const_text_;
};

}  // namespace refseg

#pragma once

// Run configuration: JSON file with a versioned schema. Unknown keys are
// rejected so typos fail loudly instead of silently using defaults.

#include "refseg/pipeline.hpp"

#include <cstdint>
#include <string>

namespace refseg {

struct RunConfig {
  int version = 1;
  uint64_t seed = 0;

  double lr = 1e-4;
  int epochs = 200;
  int batch_size = 32;
  double warmup_frac = 0.05;  // fraction of total steps
  double weight_decay = 0.01;

  int d1 = 64;
  int d2 = 64;
  int max_len = 16;
  int text_layers = 2;
  int text_heads = 4;
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
  std::string text_conditioning = "normal";  // normal | constant

  std::string manifest;
  std::string out_dir;
  std::string vocab;  // optional: load instead of building from the train split
  std::string eval_split = "val";

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;

  ModelConfig model_config(int vocab_size) const;
  void validate() const;
};

}  // namespace refseg

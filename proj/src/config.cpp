#include "refseg/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>

namespace refseg {

namespace {

using nlohmann::json;

class KeyChecker {
 public:
  explicit KeyChecker(const json& j) : j_(j) {}

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        out = j_.at(key).get<T>();
      } catch (const std::exception&) {
        throw std::invalid_argument(std::string("config: key \"") + key + "\" has the wrong type");
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw std::invalid_argument("config: unknown key \"" + it.key() + "\"");
  }

 private:
  const json& j_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");

  RunConfig c;
  KeyChecker keys(j);
  keys.get("version", c.version);
  keys.get("seed", c.seed);
  keys.get("lr", c.lr);
  keys.get("epochs", c.epochs);
  keys.get("batch_size", c.batch_size);
  keys.get("warmup_frac", c.warmup_frac);
  keys.get("weight_decay", c.weight_decay);
  keys.get("d1", c.d1);
  keys.get("d2", c.d2);
  keys.get("max_len", c.max_len);
  keys.get("text_layers", c.text_layers);
  keys.get("text_heads", c.text_heads);
  keys.get("input_low", c.input_low);
  keys.get("patch_low", c.patch_low);
  keys.get("image_layers", c.image_layers);
  keys.get("image_heads", c.image_heads);
  keys.get("input_high", c.input_high);
  keys.get("patch_high", c.patch_high);
  keys.get("highres_layers", c.highres_layers);
  keys.get("highres_heads", c.highres_heads);
  keys.get("downsample", c.downsample);
  keys.get("dense_prompt", c.dense_prompt);
  keys.get("mask_tokens", c.mask_tokens);
  keys.get("decoder_rounds", c.decoder_rounds);
  keys.get("decoder_heads", c.decoder_heads);
  keys.get("lora_rank", c.lora_rank);
  keys.get("text_lora_depth", c.text_lora_depth);
  keys.get("image_lora", c.image_lora);
  keys.get("highres_lora", c.highres_lora);
  keys.get("decoder_trainable", c.decoder_trainable);
  keys.get("text_conditioning", c.text_conditioning);
  keys.get("manifest", c.manifest);
  keys.get("out_dir", c.out_dir);
  keys.get("vocab", c.vocab);
  keys.get("eval_split", c.eval_split);
  keys.finish();

  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config file not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string RunConfig::to_json_text() const {
  json j;
  j["version"] = version;
  j["seed"] = seed;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["warmup_frac"] = warmup_frac;
  j["weight_decay"] = weight_decay;
  j["d1"] = d1;
  j["d2"] = d2;
  j["max_len"] = max_len;
  j["text_layers"] = text_layers;
  j["text_heads"] = text_heads;
  j["input_low"] = input_low;
  j["patch_low"] = patch_low;
  j["image_layers"] = image_layers;
  j["image_heads"] = image_heads;
  j["input_high"] = input_high;
  j["patch_high"] = patch_high;
  j["highres_layers"] = highres_layers;
  j["highres_heads"] = highres_heads;
  j["downsample"] = downsample;
  j["dense_prompt"] = dense_prompt;
  j["mask_tokens"] = mask_tokens;
  j["decoder_rounds"] = decoder_rounds;
  j["decoder_heads"] = decoder_heads;
  j["lora_rank"] = lora_rank;
  j["text_lora_depth"] = text_lora_depth;
  j["image_lora"] = image_lora;
  j["highres_lora"] = highres_lora;
  j["decoder_trainable"] = decoder_trainable;
  j["text_conditioning"] = text_conditioning;
  j["manifest"] = manifest;
  j["out_dir"] = out_dir;
  j["vocab"] = vocab;
  j["eval_split"] = eval_split;
  return j.dump(2);
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.d1 = d1;
  m.d2 = d2;
  m.text_layers = text_layers;
  m.text_heads = text_heads;
  m.max_len = max_len;
  m.input_low = input_low;
  m.patch_low = patch_low;
  m.image_layers = image_layers;
  m.image_heads = image_heads;
  m.input_high = input_high;
  m.patch_high = patch_high;
  m.highres_layers = highres_layers;
  m.highres_heads = highres_heads;
  m.downsample = downsample;
  m.dense_prompt = dense_prompt;
  m.mask_tokens = mask_tokens;
  m.decoder_rounds = decoder_rounds;
  m.decoder_heads = decoder_heads;
  m.lora_rank = lora_rank;
  m.text_lora_depth = text_lora_depth;
  m.image_lora = image_lora;
  m.highres_lora = highres_lora;
  m.decoder_trainable = decoder_trainable;
  m.text_conditioning_constant = text_conditioning == "constant";
  return m;
}

void RunConfig::validate() const {
  if (version != 1) throw std::invalid_argument("config: unsupported version");
  if (lr <= 0) throw std::invalid_argument("config: lr must be positive");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (warmup_frac < 0 || warmup_frac >= 1)
    throw std::invalid_argument("config: warmup_frac must be in [0,1)");
  if (weight_decay < 0) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (text_conditioning != "normal" && text_conditioning != "constant")
    throw std::invalid_argument("config: text_conditioning must be normal or constant");
  if (eval_split != "train" && eval_split != "val" && eval_split != "test")
    throw std::invalid_argument("config: eval_split must be train, val or test");
  // Model-side constraints (downsample set, divisibility, LoRA depth labels)
  // are checked by ModelConfig::validate with a placeholder vocabulary.
  model_config(3).validate();
}

}  // namespace refseg

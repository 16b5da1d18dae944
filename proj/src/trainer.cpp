#include "refseg/trainer.hpp"

#include "refseg/checkpoint.hpp"
#include "refseg/log.hpp"
#include "refseg/schedule.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fs = std::filesystem;

namespace refseg {

std::vector<float> mask_targets(const MaskU8& mask) {
  std::vector<float> t(mask.data.size());
  for (size_t i = 0; i < t.size(); ++i) t[i] = mask.data[i] ? 1.0f : 0.0f;
  return t;
}

float train_step(const ReferringSegModel& model, AdamW& opt,
                 const std::vector<const DualResSample*>& batch, double lr) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  Tensor total;
  for (const auto* sample : batch) {
    auto fwd = model.forward(*sample, /*training=*/true);
    auto loss = bce_with_logits_mean(fwd.logits, mask_targets(sample->mask));
    total = total.defined() ? add(total, loss) : loss;
  }
  auto loss = scale(total, 1.0f / static_cast<float>(batch.size()));
  const float value = loss.item();
  if (!std::isfinite(value))
    throw std::runtime_error("train_step: non-finite loss (" + std::to_string(value) +
                             "); aborting");
  backward(loss);
  opt.step(lr);
  opt.zero_grad();
  return value;
}

EvalReport evaluate_with(const std::function<MaskU8(const DualResSample&)>& predictor,
                         const std::vector<const DualResSample*>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalAccumulator acc;
  for (const auto* s : samples) acc.add(predictor(*s), s->mask);
  return acc.report();
}

EvalReport evaluate_model(const ReferringSegModel& model,
                          const std::vector<const DualResSample*>& samples) {
  return evaluate_with([&](const DualResSample& s) { return model.predict(s).mask; }, samples);
}

std::vector<const DualResSample*> PreparedData::split(const std::string& name) const {
  const std::vector<DualResSample>* src = nullptr;
  if (name == "train") src = &train;
  if (name == "val") src = &val;
  if (name == "test") src = &test;
  if (!src) throw std::invalid_argument("unknown split: " + name);
  std::vector<const DualResSample*> out;
  out.reserve(src->size());
  for (const auto& s : *src) out.push_back(&s);
  return out;
}

PreparedData prepare_dataset(const RunConfig& cfg, const DatasetManifest& manifest) {
  PreparedData data;
  if (!cfg.vocab.empty()) {
    data.tokenizer = Tokenizer::load(cfg.vocab, cfg.max_len);
  } else {
    std::vector<std::string> corpus;
    for (const auto& e : manifest.entries)
      if (e.split == "train") corpus.push_back(e.expression);
    if (corpus.empty())
      throw std::runtime_error("prepare_dataset: no train entries to build a vocabulary from");
    data.tokenizer = Tokenizer::build(corpus, cfg.max_len);
  }
  for (const auto& e : manifest.entries) {
    auto sample = preprocess_dual(load_triplet(e), cfg.input_low, cfg.input_high, data.tokenizer);
    if (e.split == "train") data.train.push_back(std::move(sample));
    else if (e.split == "val") data.val.push_back(std::move(sample));
    else data.test.push_back(std::move(sample));
  }
  return data;
}

namespace {

std::vector<std::pair<std::string, Tensor>> trainable_params(const ReferringSegModel& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  auto named = model.named_tensors();
  for (auto& [name, t] : named.params)
    if (t.requires_grad()) out.emplace_back(name, t);
  return out;
}

nlohmann::json checkpoint_meta(const RunConfig& cfg, const Tokenizer& tok, int64_t step,
                               int next_epoch, double best_giou) {
  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(cfg.to_json_text());
  meta["vocab"] = tok.to_lines();
  meta["step"] = step;
  meta["next_epoch"] = next_epoch;
  meta["best_giou"] = best_giou;
  return meta;
}

}  // namespace

void save_model_checkpoint(const ReferringSegModel& model, const RunConfig& cfg,
                           const Tokenizer& tokenizer, const std::string& path, const AdamW* opt,
                           int64_t step, int next_epoch, double best_giou) {
  CheckpointData data;
  data.meta_json = checkpoint_meta(cfg, tokenizer, step, next_epoch, best_giou).dump();
  auto named = model.named_tensors();
  collect_tensors(named, data);
  if (opt) {
    data.has_optimizer = true;
    data.optimizer = opt->state();
  }
  save_checkpoint(data, path);
}

LoadedModel load_model_checkpoint(const std::string& path) {
  auto data = load_checkpoint(path);
  auto meta = nlohmann::json::parse(data.meta_json);
  LoadedModel out;
  out.cfg = RunConfig::from_json_text(meta.at("config").dump());
  out.tokenizer =
      Tokenizer::from_lines(meta.at("vocab").get<std::vector<std::string>>(), out.cfg.max_len);
  out.step = meta.at("step").get<int64_t>();
  out.next_epoch = meta.at("next_epoch").get<int>();
  out.best_giou = meta.at("best_giou").get<double>();
  out.model = std::make_unique<ReferringSegModel>(
      out.cfg.model_config(out.tokenizer.vocab_size()), out.cfg.seed);
  auto named = out.model->named_tensors();
  restore_tensors(data, named);
  out.has_optimizer = data.has_optimizer;
  out.optimizer = data.optimizer;
  return out;
}

TrainOutcome train_loop(const RunConfig& cfg, const std::string& resume_path,
                        int stop_after_epochs) {
  if (cfg.out_dir.empty()) throw std::invalid_argument("train: out_dir not set");
  fs::create_directories(cfg.out_dir);

  auto manifest = load_manifest(cfg.manifest);
  auto data = prepare_dataset(cfg, manifest);
  if (data.train.empty()) throw std::runtime_error("train: empty train split");

  std::unique_ptr<ReferringSegModel> model;
  int start_epoch = 0;
  int64_t global_step = 0;
  double best_giou = -1.0;
  AdamW opt;
  if (!resume_path.empty()) {
    auto loaded = load_model_checkpoint(resume_path);
    model = std::move(loaded.model);
    start_epoch = loaded.next_epoch;
    global_step = loaded.step;
    best_giou = loaded.best_giou;
    opt = AdamW(trainable_params(*model), 0.9, 0.999, 1e-8, cfg.weight_decay);
    if (loaded.has_optimizer) opt.restore(loaded.optimizer);
    log::info("resumed from " + resume_path + " at epoch " + std::to_string(start_epoch) +
              ", step " + std::to_string(global_step));
  } else {
    model = std::make_unique<ReferringSegModel>(cfg.model_config(data.tokenizer.vocab_size()),
                                                cfg.seed);
    opt = AdamW(trainable_params(*model), 0.9, 0.999, 1e-8, cfg.weight_decay);
  }

  const int64_t steps_per_epoch =
      (static_cast<int64_t>(data.train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  const int64_t warmup_steps = static_cast<int64_t>(std::llround(cfg.warmup_frac * total_steps));

  TrainOutcome outcome;
  outcome.total_steps = total_steps;
  outcome.best_checkpoint = (fs::path(cfg.out_dir) / "best.ckpt").string();
  outcome.final_checkpoint = (fs::path(cfg.out_dir) / "final.ckpt").string();
  outcome.log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  outcome.best_val_giou = best_giou;

  std::ofstream log_file(outcome.log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log_file) throw std::runtime_error("train: cannot write log: " + outcome.log_path);

  const int last_epoch = stop_after_epochs > 0
                             ? std::min(cfg.epochs, start_epoch + stop_after_epochs)
                             : cfg.epochs;
  for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
    // epoch order is a pure function of (seed, epoch) so resumed runs see
    // the same batches as uninterrupted ones
    std::vector<size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed * 1000003ull + static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const DualResSample*> batch;
      for (int i = 0; i < cfg.batch_size; ++i) {
        const size_t idx = static_cast<size_t>(b) * cfg.batch_size + static_cast<size_t>(i);
        if (idx >= order.size()) break;
        batch.push_back(&data.train[order[idx]]);
      }
      const double lr = lr_at(global_step, total_steps, warmup_steps, cfg.lr);
      const float loss = train_step(*model, opt, batch, lr);
      outcome.lr_history.push_back(lr);
      nlohmann::json rec;
      rec["step"] = global_step;
      rec["loss"] = loss;
      rec["lr"] = lr;
      log_file << rec.dump() << "\n";
      ++global_step;
    }

    if (!data.val.empty()) {
      auto report = evaluate_model(*model, data.split("val"));
      nlohmann::json rec;
      rec["epoch"] = epoch;
      rec["val_giou"] = report.giou;
      rec["val_ciou"] = report.ciou;
      log_file << rec.dump() << "\n";
      log_file.flush();
      log::info("epoch " + std::to_string(epoch) + " val gIoU " + std::to_string(report.giou));
      if (report.giou > best_giou) {
        best_giou = report.giou;
        save_model_checkpoint(*model, cfg, data.tokenizer, outcome.best_checkpoint, nullptr,
                              global_step, epoch + 1, best_giou);
      }
    }
    save_model_checkpoint(*model, cfg, data.tokenizer, outcome.final_checkpoint, &opt, global_step,
                          epoch + 1, best_giou);
  }

  outcome.best_val_giou = best_giou;
  if (fs::exists(outcome.best_checkpoint) == false && !data.val.empty()) {
    save_model_checkpoint(*model, cfg, data.tokenizer, outcome.best_checkpoint, nullptr,
                          global_step, cfg.epochs, best_giou);
  }
  auto eval_samples = data.split(cfg.eval_split);
  if (!eval_samples.empty()) outcome.final_eval = evaluate_model(*model, eval_samples);
  return outcome;
}

const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes = {"rank", "text_depth", "downsample", "dense"};
  return axes;
}

std::vector<std::string> ablation_settings(const std::string& axis) {
  if (axis == "rank") return {"8", "16", "32"};
  if (axis == "text_depth") return {"zero", "half", "full"};
  if (axis == "downsample") return {"2", "4", "8"};
  if (axis == "dense") return {"w/o", "w/"};
  std::string valid;
  for (const auto& a : ablation_axes()) valid += (valid.empty() ? "" : ", ") + a;
  throw std::invalid_argument("unknown ablation axis \"" + axis + "\"; valid axes: " + valid);
}

AblationResult run_ablation(const RunConfig& base, const std::string& axis) {
  AblationResult result;
  result.axis = axis;
  const auto& axes = ablation_axes();
  result.id = static_cast<int>(std::find(axes.begin(), axes.end(), axis) - axes.begin()) + 1;

  for (const auto& setting : ablation_settings(axis)) {
    RunConfig cfg = base;
    if (axis == "rank") cfg.lora_rank = std::stoi(setting);
    if (axis == "text_depth") cfg.text_lora_depth = setting;
    if (axis == "downsample") cfg.downsample = std::stoi(setting);
    if (axis == "dense") cfg.dense_prompt = setting == "w/";
    std::string tag = setting;
    std::replace(tag.begin(), tag.end(), '/', '_');
    cfg.out_dir = (fs::path(base.out_dir) / (axis + "_" + tag)).string();
    cfg.validate();
    log::info("[ablate] axis " + axis + " setting " + setting);
    auto outcome = train_loop(cfg);
    result.rows.push_back({setting, outcome.final_eval});
  }
  return result;
}

std::string ablation_table(const AblationResult& result) {
  std::string out = metrics_table_header({"ID", "Setting"}) + "\n";
  for (size_t i = 0; i < result.rows.size(); ++i) {
    const std::string id = i == 0 ? std::to_string(result.id) : "";
    out += metrics_table_row({id, result.rows[i].setting}, result.rows[i].report) + "\n";
  }
  return out;
}

}  // namespace refseg

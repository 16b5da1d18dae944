#pragma once

// Training loop: BCE on upsampled mask logits, AdamW over the trainable
// partition, cosine schedule with linear warmup, per-epoch validation,
// best/final checkpoints, JSON-lines logging, epoch-boundary resume.

#include "refseg/config.hpp"
#include "refseg/data.hpp"
#include "refseg/metrics.hpp"
#include "refseg/optimizer.hpp"
#include "refseg/pipeline.hpp"
#include "refseg/tokenizer.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace refseg {

std::vector<float> mask_targets(const MaskU8& mask);

// One optimizer step over a batch; mean of per-sample BCE. Throws on a
// non-finite loss.
float train_step(const ReferringSegModel& model, AdamW& opt,
                 const std::vector<const DualResSample*>& batch, double lr);

EvalReport evaluate_with(const std::function<MaskU8(const DualResSample&)>& predictor,
                         const std::vector<const DualResSample*>& samples);
EvalReport evaluate_model(const ReferringSegModel& model,
                          const std::vector<const DualResSample*>& samples);

struct PreparedData {
  Tokenizer tokenizer;
  std::vector<DualResSample> train, val, test;

  std::vector<const DualResSample*> split(const std::string& name) const;
};

// Loads triplets, builds (or loads) the vocabulary from the train split,
// and preprocesses every sample to the model's dual resolution.
PreparedData prepare_dataset(const RunConfig& cfg, const DatasetManifest& manifest);

struct TrainOutcome {
  double best_val_giou = -1.0;
  int64_t total_steps = 0;
  std::string best_checkpoint;
  std::string final_checkpoint;
  std::string log_path;
  EvalReport final_eval;  // eval_split report of the final model
  std::vector<double> lr_history;
};

// A positive stop_after_epochs ends the run early at an epoch boundary
// (the final checkpoint is written every epoch, so this models an
// interruption); resume_path continues from such a checkpoint with the
// schedule fixed by cfg.epochs.
TrainOutcome train_loop(const RunConfig& cfg, const std::string& resume_path = "",
                        int stop_after_epochs = -1);

void save_model_checkpoint(const ReferringSegModel& model, const RunConfig& cfg,
                           const Tokenizer& tokenizer, const std::string& path,
                           const AdamW* opt = nullptr, int64_t step = 0, int next_epoch = 0,
                           double best_giou = -1.0);

struct LoadedModel {
  RunConfig cfg;
  Tokenizer tokenizer;
  std::unique_ptr<ReferringSegModel> model;
  int64_t step = 0;
  int next_epoch = 0;
  double best_giou = -1.0;
  bool has_optimizer = false;
  AdamW::State optimizer;
};

LoadedModel load_model_checkpoint(const std::string& path);

// Ablation sweep over one configuration axis; each setting trains a fresh
// model from the same seed and reports on cfg.eval_split.
struct AblationRow {
  std::string setting;
  EvalReport report;
};

struct AblationResult {
  int id = 0;
  std::string axis;
  std::vector<AblationRow> rows;
};

const std::vector<std::string>& ablation_axes();
std::vector<std::string> ablation_settings(const std::string& axis);
AblationResult run_ablation(const RunConfig& base, const std::string& axis);
std::string ablation_table(const AblationResult& result);

}  // namespace refseg

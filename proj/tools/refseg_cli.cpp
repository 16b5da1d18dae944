// Command-line entry points: synthetic data generation, training,
// evaluation, single-image inference and the ablation sweep.

#include "refseg/config.hpp"
#include "refseg/data.hpp"
#include "refseg/log.hpp"
#include "refseg/metrics.hpp"
#include "refseg/png_io.hpp"
#include "refseg/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace refseg;

namespace {

RunConfig load_config_with_overrides(const std::string& config_path,
                                     const std::optional<uint64_t>& seed,
                                     const std::string& manifest, const std::string& out_dir) {
  RunConfig cfg = RunConfig::from_file(config_path);
  if (seed) cfg.seed = *seed;
  if (!manifest.empty()) cfg.manifest = manifest;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  cfg.validate();
  return cfg;
}

int cmd_synth(int n, int canvas, uint64_t seed, const std::string& out) {
  auto manifest = generate_synthetic(n, canvas, seed, out);
  log::info("wrote " + std::to_string(manifest.entries.size()) + " samples to " + out +
            " (train " + std::to_string(manifest.split_count("train")) + ", val " +
            std::to_string(manifest.split_count("val")) + ", test " +
            std::to_string(manifest.split_count("test")) + ")");
  return 0;
}

int cmd_train(const std::string& config_path, const std::optional<uint64_t>& seed,
              const std::string& manifest, const std::string& out_dir,
              const std::string& resume) {
  auto cfg = load_config_with_overrides(config_path, seed, manifest, out_dir);
  auto outcome = train_loop(cfg, resume);
  log::info("training done; best val gIoU " + std::to_string(outcome.best_val_giou));
  log::info("checkpoints: " + outcome.best_checkpoint + ", " + outcome.final_checkpoint);
  if (!outcome.final_eval.per_image_iou.empty()) {
    log::info(metrics_table_header({"Split"}));
    log::info(metrics_table_row({cfg.eval_split}, outcome.final_eval));
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, std::string out_path) {
  auto loaded = load_model_checkpoint(checkpoint);
  auto manifest = load_manifest(manifest_path);
  std::vector<DualResSample> samples;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    samples.push_back(preprocess_dual(load_triplet(e), loaded.cfg.input_low,
                                      loaded.cfg.input_high, loaded.tokenizer));
  }
  if (samples.empty()) throw std::runtime_error("eval: split \"" + split + "\" has no samples");
  std::vector<const DualResSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  auto report = evaluate_model(*loaded.model, ptrs);

  std::cout << metrics_table_header({"Split"}) << "\n"
            << metrics_table_row({split}, report) << std::endl;
  if (out_path.empty())
    out_path = (fs::path(checkpoint).parent_path() / ("eval_" + split + ".json")).string();
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("eval: cannot write report: " + out_path);
  out << report.to_json() << "\n";
  log::info("report written to " + out_path);
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path,
              const std::string& expression, const std::string& out_path,
              const std::string& heatmap_path) {
  auto loaded = load_model_checkpoint(checkpoint);
  Triplet triplet;
  triplet.image = read_png(image_path, 3);
  triplet.mask = make_mask(triplet.image.h, triplet.image.w);  // output resolution only
  triplet.expression = expression;
  triplet.id = fs::path(image_path).stem().string();
  auto sample =
      preprocess_dual(triplet, loaded.cfg.input_low, loaded.cfg.input_high, loaded.tokenizer);

  auto pred = loaded.model->predict(sample);
  write_png_mask(out_path, pred.mask);
  log::info("mask written to " + out_path + " (" + std::to_string(pred.mask.area()) +
            " foreground pixels, " + std::to_string(pred.num_candidates) + " candidates)");

  if (!heatmap_path.empty()) {
    NoGradGuard ng;
    auto fwd = loaded.model->forward(sample, /*training=*/false);
    if (!fwd.p_dense.defined())
      throw std::runtime_error("infer: dense prompts are disabled in this checkpoint");
    ImageF heat = make_image(fwd.p_dense.dim(0), fwd.p_dense.dim(1), 1);
    float lo = fwd.p_dense.at(0), hi = fwd.p_dense.at(0);
    for (int64_t i = 0; i < fwd.p_dense.numel(); ++i) {
      lo = std::min(lo, fwd.p_dense.at(i));
      hi = std::max(hi, fwd.p_dense.at(i));
    }
    const float range = hi - lo > 1e-12f ? hi - lo : 1.0f;
    for (int64_t i = 0; i < fwd.p_dense.numel(); ++i)
      heat.data[static_cast<size_t>(i)] = (fwd.p_dense.at(i) - lo) / range;
    write_png_gray(heatmap_path, heat);
    log::info("dense-prompt heatmap written to " + heatmap_path);
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& axis,
               const std::optional<uint64_t>& seed, const std::string& manifest,
               const std::string& out_dir) {
  auto cfg = load_config_with_overrides(config_path, seed, manifest, out_dir);
  auto result = run_ablation(cfg, axis);
  const std::string table = ablation_table(result);
  std::cout << table;
  const std::string table_path =
      (fs::path(cfg.out_dir) / ("ablation_" + axis + ".txt")).string();
  std::ofstream out(table_path);
  out << table;
  log::info("table written to " + table_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"referring-expression segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic shapes dataset");
  int synth_n = 100, synth_canvas = 96;
  uint64_t synth_seed = 0;
  std::string synth_out = "synthetic";
  synth->add_option("--n", synth_n, "number of samples");
  synth->add_option("--canvas", synth_canvas, "canvas size in pixels");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory");

  // shared train/eval options
  std::string config_path, manifest, out_dir, resume, checkpoint, split = "val";
  std::string image_path, expression, out_path, heatmap_path, axis;
  std::optional<uint64_t> seed_override;
  uint64_t seed_value = 0;

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();
  auto* train_seed = train->add_option("--seed", seed_value, "override config seed");
  train->add_option("--manifest", manifest, "override dataset manifest");
  train->add_option("--out", out_dir, "override output directory");
  train->add_option("--resume", resume, "resume from a final checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--manifest", manifest, "dataset manifest")->required();
  eval->add_option("--split", split, "split to evaluate");
  eval->add_option("--out", out_path, "JSON report path");

  auto* infer = app.add_subcommand("infer", "segment one image given an expression");
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer->add_option("--image", image_path, "input PNG")->required();
  infer->add_option("--expression", expression, "referring expression")->required();
  infer->add_option("--out", out_path, "output mask PNG")->required();
  infer->add_option("--heatmap", heatmap_path, "optional dense-prompt heatmap PNG");

  auto* ablate = app.add_subcommand("ablate", "sweep one configuration axis");
  ablate->add_option("--config", config_path, "run config JSON")->required();
  ablate->add_option("--axis", axis, "rank | text_depth | downsample | dense")->required();
  auto* ablate_seed = ablate->add_option("--seed", seed_value, "override config seed");
  ablate->add_option("--manifest", manifest, "override dataset manifest");
  ablate->add_option("--out", out_dir, "override output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_n, synth_canvas, synth_seed, synth_out);
    if (train->parsed()) {
      if (train_seed->count()) seed_override = seed_value;
      return cmd_train(config_path, seed_override, manifest, out_dir, resume);
    }
    if (eval->parsed()) return cmd_eval(checkpoint, manifest, split, out_path);
    if (infer->parsed()) return cmd_infer(checkpoint, image_path, expression, out_path, heatmap_path);
    if (ablate->parsed()) {
      if (ablate_seed->count()) seed_override = seed_value;
      return cmd_ablate(config_path, axis, seed_override, manifest, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}

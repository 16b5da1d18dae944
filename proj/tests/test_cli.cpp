#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// End-to-end exercises of the command-line tool against a tiny synthetic
// dataset. The binary path comes from the build system.

#include "refseg/metrics.hpp"
#include "refseg/trainer.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;
using namespace refseg;

#ifndef REFSEG_CLI_PATH
#error "REFSEG_CLI_PATH must be defined by the build"
#endif

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(REFSEG_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  CmdResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) res.output += buf.data();
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "refseg_cli_ws";
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }

  std::string write_config(bool constant_text = false) {
    const std::string path = (root / "config.json").string();
    std::ofstream out(path);
    out << R"({
      "version": 1, "seed": 3, "lr": 0.001, "epochs": 2, "batch_size": 4,
      "warmup_frac": 0.1, "d1": 16, "d2": 16, "max_len": 8,
      "text_layers": 2, "text_heads": 2,
      "input_low": 16, "patch_low": 4, "image_layers": 1, "image_heads": 2,
      "input_high": 32, "patch_high": 4, "highres_layers": 1, "highres_heads": 2,
      "downsample": 2, "mask_tokens": 3, "decoder_rounds": 1, "decoder_heads": 2,
      "lora_rank": 2, "text_conditioning": ")"
        << (constant_text ? "constant" : "normal") << R"(",
      "manifest": ")" << (root / "data" / "manifest.jsonl").string() << R"(",
      "out_dir": ")" << (root / "run").string() << R"("
    })";
    return path;
  }
};

}  // namespace

TEST_CASE("cli: synth, train, eval, infer round trip") {
  Workspace ws;
  auto synth = run_cli("synth --n 24 --canvas 48 --seed 5 --out " + (ws.root / "data").string());
  CHECK(synth.exit_code == 0);
  CHECK(fs::exists(ws.root / "data" / "manifest.jsonl"));

  const auto config = ws.write_config();
  auto train = run_cli("train --config " + config);
  CHECK(train.exit_code == 0);
  const std::string best = (ws.root / "run" / "best.ckpt").string();
  const std::string final_ckpt = (ws.root / "run" / "final.ckpt").string();
  CHECK(fs::exists(best));
  CHECK(fs::exists(final_ckpt));
  CHECK(fs::exists(ws.root / "run" / "train_log.jsonl"));

  auto eval = run_cli("eval --checkpoint " + final_ckpt + " --manifest " +
                      (ws.root / "data" / "manifest.jsonl").string() + " --split val");
  CHECK(eval.exit_code == 0);
  for (const auto& col : {"Pr@0.5", "Pr@0.6", "Pr@0.7", "Pr@0.8", "Pr@0.9", "cIoU", "gIoU"})
    CHECK(eval.output.find(col) != std::string::npos);
  CHECK(fs::exists(ws.root / "run" / "eval_val.json"));

  // untrained-quality model still yields a finite report
  auto report = EvalReport::from_json(read_file((ws.root / "run" / "eval_val.json").string()));
  CHECK(report.giou >= 0.0);
  CHECK(report.giou <= 1.0);

  // inference writes a mask deterministically
  DatasetManifest manifest = load_manifest((ws.root / "data" / "manifest.jsonl").string());
  const auto& entry = manifest.entries.front();
  const std::string mask_a = (ws.root / "mask_a.png").string();
  const std::string mask_b = (ws.root / "mask_b.png").string();
  const std::string heat = (ws.root / "heat.png").string();
  auto infer_a = run_cli("infer --checkpoint " + final_ckpt + " --image " + entry.image_path +
                         " --expression \"" + entry.expression + "\" --out " + mask_a +
                         " --heatmap " + heat);
  CHECK(infer_a.exit_code == 0);
  auto infer_b = run_cli("infer --checkpoint " + final_ckpt + " --image " + entry.image_path +
                         " --expression \"" + entry.expression + "\" --out " + mask_b);
  CHECK(infer_b.exit_code == 0);
  CHECK(read_file(mask_a) == read_file(mask_b));
  CHECK(fs::exists(heat));
}

TEST_CASE("cli: error paths exit with code 2 and a clear message") {
  Workspace ws;
  run_cli("synth --n 8 --canvas 48 --seed 1 --out " + (ws.root / "data").string());
  const auto config = ws.write_config();

  // missing dataset manifest
  auto bad_manifest = run_cli("train --config " + config + " --manifest " +
                              (ws.root / "nope.jsonl").string());
  CHECK(bad_manifest.exit_code == 2);
  CHECK(bad_manifest.output.find("manifest not found") != std::string::npos);

  // train something small so later commands have a checkpoint
  auto train = run_cli("train --config " + config);
  REQUIRE(train.exit_code == 0);
  const std::string ckpt = (ws.root / "run" / "final.ckpt").string();

  // empty expression surfaces the tokenizer error
  DatasetManifest manifest = load_manifest((ws.root / "data" / "manifest.jsonl").string());
  auto empty_expr = run_cli("infer --checkpoint " + ckpt + " --image " +
                            manifest.entries[0].image_path + " --expression \" , \" --out " +
                            (ws.root / "m.png").string());
  CHECK(empty_expr.exit_code == 2);
  CHECK(empty_expr.output.find("expression") != std::string::npos);

  // unknown ablation axis lists the valid ones
  auto bad_axis = run_cli("ablate --config " + config + " --axis flavor");
  CHECK(bad_axis.exit_code == 2);
  for (const auto& axis : {"rank", "text_depth", "downsample", "dense"})
    CHECK(bad_axis.output.find(axis) != std::string::npos);

  // invalid config key
  std::ofstream(ws.root / "bad.json") << R"({"version":1,"typo_key":3})";
  auto bad_cfg = run_cli("train --config " + (ws.root / "bad.json").string());
  CHECK(bad_cfg.exit_code == 2);
  CHECK(bad_cfg.output.find("typo_key") != std::string::npos);
}

TEST_CASE("evaluate_with: a perfect oracle saturates every metric") {
  Workspace ws;
  generate_synthetic(10, 48, 2, (ws.root / "data").string());
  auto manifest = load_manifest((ws.root / "data" / "manifest.jsonl").string());
  auto tok = Tokenizer::build({"the red circle"}, 8);

  std::vector<DualResSample> samples;
  for (const auto& e : manifest.entries)
    samples.push_back(preprocess_dual(load_triplet(e), 16, 32, tok));
  std::vector<const DualResSample*> ptrs;
  for (auto& s : samples) ptrs.push_back(&s);

  auto report = evaluate_with([](const DualResSample& s) { return s.mask; }, ptrs);
  CHECK(report.giou == 1.0);
  CHECK(report.ciou == 1.0);
  for (const auto& [t, v] : report.pr) CHECK(v == 100.0);
}

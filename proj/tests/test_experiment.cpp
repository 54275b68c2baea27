// Experiment lifecycle: config parsing, data generation, train/eval/sweep
// orchestration, and the CLI binary's commands and exit codes.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vdd/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json micro_config(const fs::path& dir) {
  json j;
  j["task"]["source_classes"] = {{0, 1}, {1, 2}};
  j["data"] = {{"kind", "synthetic"},
               {"n_per_class", 16},
               {"n_test_per_class", 8},
               {"target_unknown", {3}}};
  j["model"] = {{"preset", "small"}, {"latent_s", 64}, {"latent_d", 4}, {"embed_dim", 8}};
  j["train"] = {{"epochs", 1}, {"batch_size", 8}, {"seed", 5}};
  j["out"] = (dir / "run").string();
  return j;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VDD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST(ExperimentConfig, DefaultsMirrorReferenceSettings) {
  json j;
  j["task"]["source_classes"] = {{0, 1}, {1, 2}};
  auto cfg = vdd::config_io::from_json(j);
  EXPECT_EQ(cfg.train.epochs, 50);
  EXPECT_EQ(cfg.train.batch_size, 32);
  EXPECT_DOUBLE_EQ(cfg.train.learning_rate, 2e-4);
  EXPECT_DOUBLE_EQ(cfg.train.weight_decay, 5e-4);
  EXPECT_DOUBLE_EQ(cfg.dropout, 0.7);
  EXPECT_DOUBLE_EQ(cfg.train.beta, 6.0);
  EXPECT_DOUBLE_EQ(cfg.train.xi, 1.0);
  EXPECT_DOUBLE_EQ(cfg.train.lambda, 2.0);
  EXPECT_DOUBLE_EQ(cfg.train.gamma, 1.0);
  EXPECT_DOUBLE_EQ(cfg.train.delta_known, 0.9);
  EXPECT_DOUBLE_EQ(cfg.train.delta_unk, 0.3);
  EXPECT_FALSE(cfg.train.alpha_const.has_value());
  EXPECT_EQ(cfg.model_preset, "digits");
  EXPECT_EQ(cfg.sweep_alpha.size(), 5u);   // 1.0 .. 3.0 step 0.5
  EXPECT_EQ(cfg.sweep_gamma.size(), 6u);   // 0.5 .. 3.0 step 0.5

  auto round = vdd::config_io::from_json(vdd::config_io::to_json(cfg));
  EXPECT_EQ(vdd::config_io::to_json(round), vdd::config_io::to_json(cfg));
}

TEST(ExperimentConfig, ValidationErrors) {
  json j;
  j["task"]["source_classes"] = {{0, 1}, {1, 2}};
  j["data"]["target_unknown"] = {1};  // appears in a source set
  EXPECT_THROW(vdd::config_io::from_json(j), vdd::ConfigError);

  json k;
  k["task"]["source_classes"] = {{0, 1}, {1, 2}};
  k["data"]["kind"] = "external";
  EXPECT_THROW(vdd::config_io::from_json(k), vdd::ConfigError);

  json m;
  m["task"]["source_classes"] = {{0, 1}, {1, 2}};
  m["data"]["kind"] = "nope";
  EXPECT_THROW(vdd::config_io::from_json(m), vdd::ConfigError);
}

TEST(GenData, LayoutAndIdempotence) {
  const auto dir = fs::temp_directory_path() / "vdd_gendata";
  fs::remove_all(dir);
  auto j = micro_config(dir);
  j["data"]["root"] = (dir / "data").string();
  auto cfg = vdd::config_io::from_json(j);

  vdd::cmd_gen_data(cfg);
  int domain_dirs = 0;
  for (const auto& e : fs::directory_iterator(dir / "data"))
    if (e.is_directory()) ++domain_dirs;
  EXPECT_EQ(domain_dirs, 3);  // 2 sources + target
  EXPECT_TRUE(fs::exists(dir / "data" / "target" / "test"));
  EXPECT_TRUE(fs::exists(dir / "data" / "task.json"));

  const auto probe = dir / "data" / "source0" / "train" / "0" / "00000.ppm";
  const std::string before = slurp(probe);
  vdd::cmd_gen_data(cfg);  // rerun: byte-identical
  EXPECT_EQ(slurp(probe), before);

  // Invalid partition: validation fails before anything is written.
  auto bad = micro_config(dir);
  bad["data"]["root"] = (dir / "bad_data").string();
  bad["data"]["target_unknown"] = {0};
  EXPECT_THROW(vdd::config_io::from_json(bad), vdd::ConfigError);
  EXPECT_FALSE(fs::exists(dir / "bad_data"));
  fs::remove_all(dir);
}

TEST(TrainEvalLifecycle, ArtifactsSelectorsAndExternalRoundTrip) {
  const auto dir = fs::temp_directory_path() / "vdd_lifecycle";
  fs::remove_all(dir);
  auto cfg = vdd::config_io::from_json(micro_config(dir));
  cfg.train.epochs = 2;

  const std::string run = vdd::cmd_train(cfg, cfg.out_dir);
  EXPECT_TRUE(fs::exists(fs::path(run) / "config.json"));
  EXPECT_TRUE(fs::exists(fs::path(run) / "task.json"));
  EXPECT_TRUE(fs::exists(fs::path(run) / "metrics.csv"));
  EXPECT_TRUE(fs::exists(fs::path(run) / "checkpoints" / "last.ckpt"));

  auto last = vdd::cmd_eval(cfg, run, "last");
  EXPECT_EQ(last.size(), 1u);
  auto all = vdd::cmd_eval(cfg, run, "all");
  EXPECT_EQ(all.size(), 2u);
  auto best = vdd::cmd_eval(cfg, run, "best:h_score");
  EXPECT_EQ(best.size(), 1u);
  for (const auto& [ckpt, r] : all) {
    EXPECT_GE(r.os, 0.0);
    EXPECT_LE(r.os, 1.0);
  }
  EXPECT_TRUE(fs::exists(fs::path(run) / "eval" / "last.json"));
  EXPECT_THROW(vdd::cmd_eval(cfg, run, "median"), vdd::EvalError);
  EXPECT_THROW(vdd::cmd_eval(cfg, (dir / "nope").string(), "last"), vdd::EvalError);

  auto gallery_files = vdd::cmd_gallery(cfg, run, 6);
  EXPECT_FALSE(gallery_files.empty());
  for (const auto& f : gallery_files) EXPECT_TRUE(fs::exists(f));

  // The same experiment trained off the exported on-disk layout (external
  // ingestion path) tracks the in-memory pipeline up to the 8-bit raster
  // quantization of the export.
  auto exported = cfg;
  exported.data.root = (dir / "data").string();
  vdd::cmd_gen_data(exported);
  exported.data.kind = "external";
  const std::string run2 = vdd::cmd_train(exported, (dir / "run_external").string());
  std::istringstream mem(slurp(fs::path(run) / "metrics.csv"));
  std::istringstream ext(slurp(fs::path(run2) / "metrics.csv"));
  std::string lm, le;
  std::getline(mem, lm);
  std::getline(ext, le);
  int compared = 0;
  while (std::getline(mem, lm) && std::getline(ext, le)) {
    auto total_of = [](const std::string& line) {
      std::stringstream ss(line);
      std::string tok;
      for (int i = 0; i <= 11; ++i) std::getline(ss, tok, ',');
      return std::stod(tok);
    };
    EXPECT_NEAR(total_of(le), total_of(lm), 0.01 * std::abs(total_of(lm)));
    ++compared;
  }
  EXPECT_EQ(compared, 8);  // 2 epochs x 4 steps
  fs::remove_all(dir);
}

TEST(Sweep, GridRowsAndResume) {
  const auto dir = fs::temp_directory_path() / "vdd_sweep";
  fs::remove_all(dir);
  auto cfg = vdd::config_io::from_json(micro_config(dir));
  cfg.sweep_alpha = {0.5, 1.0};
  cfg.sweep_gamma = {1.0};

  const std::string csv = vdd::cmd_sweep(cfg, (dir / "sweep").string());
  std::istringstream first(slurp(csv));
  std::string line;
  std::getline(first, line);
  EXPECT_EQ(line, "alpha,gamma,os,os_star,unk,h_score");
  int rows = 0;
  while (std::getline(first, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 2);

  // Re-running the sweep adds no duplicate rows.
  const std::string again = vdd::cmd_sweep(cfg, (dir / "sweep").string());
  std::istringstream second(slurp(again));
  int rows2 = -1;  // discount header
  while (std::getline(second, line))
    if (!line.empty()) ++rows2;
  EXPECT_EQ(rows2, 2);
  fs::remove_all(dir);
}

// ------------------------------------------------------------------
// CLI binary: subcommands and exit-code categories
// ------------------------------------------------------------------

TEST(Cli, ExitCodesAndHappyPath) {
  const auto dir = fs::temp_directory_path() / "vdd_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);

  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_NE(run_cli("train"), 0);  // missing --config

  // Validation errors exit with category code 2.
  EXPECT_EQ(run_cli("train --config /does/not/exist.json"), 2);
  {
    std::ofstream bad(dir / "bad.json");
    bad << "{ not json";
  }
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string()), 2);

  auto j = micro_config(dir);
  j["data"]["root"] = (dir / "data").string();
  {
    std::ofstream out(dir / "config.json");
    out << j.dump(2);
  }
  const std::string cfg_arg = " --config " + (dir / "config.json").string();

  EXPECT_EQ(run_cli("train" + cfg_arg + " --device cuda"), 2);
  EXPECT_EQ(run_cli("gen-data" + cfg_arg), 0);
  EXPECT_EQ(run_cli("train" + cfg_arg + " --deterministic"), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "metrics.csv"));

  EXPECT_EQ(run_cli("eval --run " + (dir / "run").string() + " --checkpoint last"), 0);
  EXPECT_EQ(run_cli("eval --run " + (dir / "run").string() + " --checkpoint best:h_score"), 0);
  EXPECT_EQ(run_cli("gallery --run " + (dir / "run").string() + " --n 4"), 0);

  // Evaluation errors exit with category code 5.
  EXPECT_EQ(run_cli("eval --run " + (dir / "empty_run").string()), 2);  // no config snapshot
  fs::create_directories(dir / "half_run");
  {
    std::ofstream out(dir / "half_run" / "config.json");
    out << j.dump(2);
  }
  EXPECT_EQ(run_cli("eval --run " + (dir / "half_run").string()), 5);  // no checkpoint
  fs::remove_all(dir);
}

// Command-line entry points for the full experiment lifecycle: synthetic
// data generation, training, evaluation, sensitivity sweeps and galleries.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vdd/core/blas.hpp"
#include "vdd/experiment.hpp"

namespace {

// Exit codes by error category.
constexpr int kOk = 0;
constexpr int kValidationError = 2;
constexpr int kDataError = 3;
constexpr int kTrainingError = 4;
constexpr int kEvalError = 5;

struct CommonOpts {
  std::string config_path;
  std::string out;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  bool disable_exemplar = false;
  bool disable_disentangle = false;
  std::string device = "cpu";
};

vdd::ExperimentConfig load_config(const CommonOpts& opts) {
  std::ifstream in(opts.config_path);
  if (!in) throw vdd::ConfigError("cannot open config " + opts.config_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw vdd::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  auto cfg = vdd::config_io::from_json(j);
  if (opts.seed) cfg.train.seed = *opts.seed;
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (opts.disable_exemplar) cfg.train.disable_exemplar = true;
  if (opts.disable_disentangle) cfg.train.disable_disentangle = true;
  if (opts.device != "cpu")
    throw vdd::ConfigError("this build only supports --device cpu");
  if (opts.deterministic) vdd::blas::set_num_threads(1);
  return cfg;
}

vdd::ExperimentConfig load_run_config(const std::string& run_dir) {
  const std::string path = run_dir + "/config.json";
  std::ifstream in(path);
  if (!in) throw vdd::ConfigError("run directory has no config snapshot: " + path);
  nlohmann::json j;
  in >> j;
  return vdd::config_io::from_json(j);
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_config) {
  auto* c = cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
  if (needs_config) c->required();
  cmd->add_option("--seed", opts.seed, "override the config seed");
  cmd->add_option("--out", opts.out, "override the output directory");
  cmd->add_flag("--deterministic", opts.deterministic,
                "bit-reproducible mode (single-threaded BLAS)");
  cmd->add_flag("--disable-exemplar", opts.disable_exemplar, "ablation: drop L_exe (alpha = 0)");
  cmd->add_flag("--disable-disentangle", opts.disable_disentangle,
                "ablation: plain KL on the domain branch");
  cmd->add_option("--device", opts.device, "compute device (cpu)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VDD: variational domain disentanglement for generalized "
               "multi-source domain adaptation"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string run_dir, selector = "last";
  int gallery_samples = 16;

  auto* gen = app.add_subcommand("gen-data", "materialize synthetic domains to disk");
  add_common(gen, opts, true);

  auto* train = app.add_subcommand("train", "train one experiment");
  add_common(train, opts, true);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints of a run");
  add_common(eval_cmd, opts, false);
  eval_cmd->add_option("--run", run_dir, "run directory")->required();
  eval_cmd->add_option("--checkpoint", selector, "last | all | best:h_score");

  auto* sweep = app.add_subcommand("sweep", "alpha/gamma sensitivity grid");
  add_common(sweep, opts, true);

  auto* gallery = app.add_subcommand("gallery", "reconstruction grids from a checkpoint");
  add_common(gallery, opts, false);
  gallery->add_option("--run", run_dir, "run directory")->required();
  gallery->add_option("--n", gallery_samples, "samples per gallery");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = load_config(opts);
      if (!opts.out.empty()) cfg.data.root = opts.out;
      std::cout << "dataset written to " << vdd::cmd_gen_data(cfg) << "\n";
    } else if (train->parsed()) {
      auto cfg = load_config(opts);
      const std::string dir = vdd::cmd_train(cfg, cfg.out_dir);
      std::cout << "run complete: " << dir << "\n";
    } else if (eval_cmd->parsed()) {
      auto cfg = opts.config_path.empty() ? load_run_config(run_dir) : load_config(opts);
      if (opts.deterministic) vdd::blas::set_num_threads(1);
      auto reports = vdd::cmd_eval(cfg, run_dir, selector);
      for (const auto& [ckpt, r] : reports)
        std::printf("%s: OS %.4f OS* %.4f UNK %.4f H %.4f\n", ckpt.c_str(), r.os, r.os_star,
                    r.unk, r.h_score);
    } else if (sweep->parsed()) {
      auto cfg = load_config(opts);
      std::cout << "sweep CSV: " << vdd::cmd_sweep(cfg, cfg.out_dir) << "\n";
    } else if (gallery->parsed()) {
      auto cfg = opts.config_path.empty() ? load_run_config(run_dir) : load_config(opts);
      auto files = vdd::cmd_gallery(cfg, run_dir, gallery_samples);
      for (const auto& f : files) std::cout << f << "\n";
    }
  } catch (const vdd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const vdd::ProtocolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const vdd::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const vdd::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTrainingError;
  } catch (const vdd::EvalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEvalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}

#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "vdd/config.hpp"
#include "vdd/evaluation.hpp"
#include "vdd/image_io.hpp"
#include "vdd/self_training.hpp"

// Experiment lifecycle glue shared by the CLI and the acceptance suite:
// data preparation, training runs, checkpoint evaluation, sweeps, galleries.
namespace vdd {

namespace fs = std::filesystem;

struct ExperimentData {
  GmdaTask task;
  std::vector<DomainDataset> train_sets;  // sources 0..N-1, then target
  DomainDataset target_test;
};

inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
  ExperimentData d{cfg.build_task(), {}, {}};
  const int n_domains = d.task.num_domains();
  if (cfg.data.kind == "synthetic") {
    auto styles = cfg.resolved_styles(n_domains);
    for (int dom = 0; dom < n_domains; ++dom)
      d.train_sets.push_back(generate_synthetic_domain(
          d.task, dom, styles[dom], cfg.data.n_per_class, cfg.train.seed, Split::kTrain,
          cfg.data.target_unknown_raw, cfg.data.image_hw));
    d.target_test = generate_synthetic_domain(
        d.task, d.task.target_index(), styles.back(), cfg.data.n_test_per_class, cfg.train.seed,
        Split::kTest, cfg.data.target_unknown_raw, cfg.data.image_hw);
  } else {
    const auto& names = d.task.domain_names();
    for (int dom = 0; dom < n_domains; ++dom)
      d.train_sets.push_back(load_external_domain(cfg.data.root, names[dom], d.task, dom,
                                                  Split::kTrain, cfg.data.image_hw));
    d.target_test = load_external_domain(cfg.data.root, names.back(), d.task,
                                         d.task.target_index(), Split::kTest, cfg.data.image_hw);
  }
  return d;
}

// Materializes the synthetic domains to the documented on-disk layout.
inline std::string cmd_gen_data(const ExperimentConfig& cfg) {
  if (cfg.data.kind != "synthetic")
    throw ConfigError("gen-data only applies to synthetic experiments");
  if (cfg.data.root.empty()) throw ConfigError("gen-data needs data.root");
  cfg.validate();
  auto data = prepare_data(cfg);
  const auto& names = data.task.domain_names();
  for (int dom = 0; dom < data.task.num_domains(); ++dom)
    export_dataset(cfg.data.root, names[dom], data.train_sets[dom]);
  export_dataset(cfg.data.root, names.back(), data.target_test);
  std::ofstream task_doc(fs::path(cfg.data.root) / "task.json");
  task_doc << data.task.to_json().dump(2) << '\n';
  return cfg.data.root;
}

// Trains one run into run_dir, leaving a resolved config snapshot, the task
// document, per-step metrics and checkpoints behind.
inline std::string cmd_train(const ExperimentConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  auto data = prepare_data(cfg);
  fs::create_directories(run_dir);
  {
    std::ofstream snap(fs::path(run_dir) / "config.json");
    snap << config_io::to_json(cfg).dump(2) << '\n';
    std::ofstream task_doc(fs::path(run_dir) / "task.json");
    task_doc << data.task.to_json().dump(2) << '\n';
  }
  std::vector<const DomainDataset*> sources;
  std::vector<const DomainDataset*> all;
  for (const auto& ds : data.train_sets) all.push_back(&ds);
  for (int s = 0; s < data.task.num_sources(); ++s) sources.push_back(&data.train_sets[s]);
  auto pool = build_exemplar_pool(sources, data.task, cfg.train.seed);

  Trainer trainer(cfg.train, cfg.build_model_config(), data.task);
  trainer.train(all, pool, run_dir);
  return run_dir;
}

inline std::vector<std::string> list_checkpoints(const std::string& run_dir) {
  std::vector<std::string> found;
  const fs::path dir = fs::path(run_dir) / "checkpoints";
  if (!fs::exists(dir)) return found;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("epoch_", 0) == 0) found.push_back(e.path().string());
  }
  std::sort(found.begin(), found.end());
  return found;
}

inline EvalReport eval_checkpoint(const ExperimentConfig& cfg, const ExperimentData& data,
                                  const std::string& ckpt_path) {
  VddModel<float> model(cfg.build_model_config(), data.task.num_domains(),
                        data.task.num_known_classes(), cfg.train.seed);
  model.import_state(load_tensor_map<float>(ckpt_path));
  return eval::evaluate(model, data.target_test, data.task, cfg.train.delta_unk);
}

// selector: "last" | "all" | "best:h_score". Reports land in run_dir/eval.
inline std::vector<std::pair<std::string, EvalReport>> cmd_eval(const ExperimentConfig& cfg,
                                                                const std::string& run_dir,
                                                                const std::string& selector) {
  auto data = prepare_data(cfg);
  std::vector<std::string> ckpts;
  if (selector == "last") {
    const auto last = fs::path(run_dir) / "checkpoints" / "last.ckpt";
    if (!fs::exists(last)) throw EvalError("missing checkpoint " + last.string());
    ckpts.push_back(last.string());
  } else if (selector == "all" || selector.rfind("best:", 0) == 0) {
    ckpts = list_checkpoints(run_dir);
    if (ckpts.empty()) throw EvalError("no checkpoints under " + run_dir);
  } else {
    throw EvalError("unknown checkpoint selector '" + selector + "'");
  }

  std::vector<std::pair<std::string, EvalReport>> reports;
  for (const auto& c : ckpts) reports.emplace_back(c, eval_checkpoint(cfg, data, c));

  if (selector.rfind("best:", 0) == 0) {
    if (selector != "best:h_score") throw EvalError("unsupported selector '" + selector + "'");
    auto best = std::max_element(reports.begin(), reports.end(),
                                 [](const auto& a, const auto& b) {
                                   return a.second.h_score < b.second.h_score;
                                 });
    reports = {*best};
  }

  fs::create_directories(fs::path(run_dir) / "eval");
  for (const auto& [path, report] : reports) {
    const std::string stem = fs::path(path).stem().string();
    std::ofstream out(fs::path(run_dir) / "eval" / (stem + ".json"));
    out << report.to_json().dump(2) << '\n';
  }

  // Run summary: the best-epoch report among everything just evaluated.
  auto best = std::max_element(
      reports.begin(), reports.end(),
      [](const auto& a, const auto& b) { return a.second.h_score < b.second.h_score; });
  nlohmann::json summary;
  summary["checkpoint"] = best->first;
  summary["report"] = best->second.to_json();
  std::ofstream sum(fs::path(run_dir) / "eval" / "summary.json");
  sum << summary.dump(2) << '\n';
  return reports;
}

// One training + evaluation per (alpha, gamma) grid point; alpha is applied
// as a constant, overriding the progressive schedule. Completed points are
// skipped so an interrupted sweep resumes without duplicate rows.
inline std::string cmd_sweep(const ExperimentConfig& base, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string csv_path = (fs::path(out_dir) / "sweep.csv").string();
  std::set<std::string> done;
  if (fs::exists(csv_path)) {
    std::ifstream in(csv_path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      if (c1 != std::string::npos && c2 != std::string::npos)
        done.insert(line.substr(0, c2));
    }
  } else {
    std::ofstream head(csv_path);
    head << "alpha,gamma,os,os_star,unk,h_score\n";
  }

  char key[64];
  for (double alpha : base.sweep_alpha) {
    for (double gamma : base.sweep_gamma) {
      std::snprintf(key, sizeof(key), "%g,%g", alpha, gamma);
      if (done.count(key)) continue;
      ExperimentConfig cfg = base;
      cfg.train.alpha_const = alpha;
      cfg.train.gamma = gamma;
      char sub[64];
      std::snprintf(sub, sizeof(sub), "a%g_g%g", alpha, gamma);
      const std::string run_dir = (fs::path(out_dir) / sub).string();
      cmd_train(cfg, run_dir);
      auto reports = cmd_eval(cfg, run_dir, "last");
      const EvalReport& r = reports.front().second;
      std::ofstream csv(csv_path, std::ios::app);
      csv << key << ',' << r.os << ',' << r.os_star << ',' << r.unk << ',' << r.h_score
          << '\n';
    }
  }
  return csv_path;
}

// Reconstruction/fake-reconstruction grids from a trained checkpoint.
inline std::vector<std::string> cmd_gallery(const ExperimentConfig& cfg,
                                            const std::string& run_dir, int n_samples = 16) {
  auto data = prepare_data(cfg);
  const auto last = fs::path(run_dir) / "checkpoints" / "last.ckpt";
  if (!fs::exists(last)) throw EvalError("missing checkpoint " + last.string());
  VddModel<float> model(cfg.build_model_config(), data.task.num_domains(),
                        data.task.num_known_classes(), cfg.train.seed);
  model.import_state(load_tensor_map<float>(last.string()));

  std::vector<const ImageTensor*> samples;
  std::vector<int> domains, fakes;
  const int n = std::min<int>(n_samples, data.target_test.size());
  for (int i = 0; i < n; ++i) {
    samples.push_back(&data.target_test.images[i]);
    domains.push_back(data.task.target_index());
    fakes.push_back(i % data.task.num_sources());
  }
  return eval::reconstruction_gallery(model, samples, domains, fakes,
                                      (fs::path(run_dir) / "gallery").string());
}

}  // namespace vdd

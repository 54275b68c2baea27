#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdd/data.hpp"
#include "vdd/errors.hpp"
#include "vdd/model.hpp"
#include "vdd/self_training.hpp"
#include "vdd/task.hpp"

namespace vdd {

using nlohmann::json;

// Distinct style palette; the last entry is the most shifted and is the
// default target style.
inline std::vector<StyleSpec> make_default_styles(int num_domains) {
  static const std::vector<StyleSpec> palette = {
      {0.62f, 0.35f, 0.25f, 0, 6, 0.02f, {0.95f, 0.85f, 0.30f}, 0.06f, 0.10f, 0.15f},
      {0.33f, 0.30f, 0.30f, 1, 5, 0.02f, {0.90f, 0.20f, 0.25f}, 0.06f, 0.10f, 0.15f},
      {0.08f, 0.40f, 0.25f, 2, 5, 0.02f, {0.20f, 0.90f, 0.90f}, 0.06f, 0.10f, 0.15f},
      {0.50f, 0.30f, 0.30f, 4, 4, 0.03f, {0.95f, 0.60f, 0.90f}, 0.06f, 0.10f, 0.15f},
      {0.00f, 0.45f, 0.25f, 5, 6, 0.03f, {0.30f, 0.95f, 0.40f}, 0.06f, 0.10f, 0.15f},
      {0.45f, 0.38f, 0.30f, 3, 4, 0.03f, {0.97f, 0.97f, 0.97f}, 0.06f, 0.10f, 0.15f},
  };
  std::vector<StyleSpec> styles;
  for (int d = 0; d < num_domains - 1; ++d) styles.push_back(palette[d % (palette.size() - 1)]);
  styles.push_back(palette.back());
  return styles;
}

struct DataConfig {
  std::string kind = "synthetic";  // "synthetic" | "external"
  std::string root;                // dataset root for "external" / gen-data output
  int n_per_class = 200;
  int n_test_per_class = 50;
  int image_hw = 32;
  std::vector<int> target_unknown_raw;  // raw glyph ids private to the target
  std::vector<StyleSpec> styles;        // one per domain; defaulted when empty
};

struct ExperimentConfig {
  std::vector<std::vector<int>> source_classes_raw;
  std::vector<std::string> domain_names;  // optional; defaulted by the task
  bool target_has_unknown = true;
  DataConfig data;
  std::string model_preset = "digits";
  std::optional<int> latent_d, latent_s, embed_dim, res_blocks;
  double dropout = 0.7;
  TrainConfig train;
  std::vector<double> sweep_alpha{1.0, 1.5, 2.0, 2.5, 3.0};
  std::vector<double> sweep_gamma{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  std::string out_dir = "runs/exp";

  GmdaTask build_task() const {
    return GmdaTask::build(source_classes_raw, target_has_unknown, train.seed, domain_names);
  }

  ModelConfig build_model_config() const {
    ModelConfig m = ModelConfig::preset(model_preset);
    m.image_hw = data.image_hw;
    if (latent_d) m.latent_d = *latent_d;
    if (latent_s) m.latent_s = *latent_s;
    if (embed_dim) m.embed_dim = *embed_dim;
    if (res_blocks) m.res_blocks_per_stage = *res_blocks;
    m.dropout = static_cast<float>(dropout);
    return m;
  }

  std::vector<StyleSpec> resolved_styles(int num_domains) const {
    if (data.styles.empty()) return make_default_styles(num_domains);
    if (static_cast<int>(data.styles.size()) != num_domains)
      throw ConfigError("expected one style per domain");
    return data.styles;
  }

  void validate() const {
    train.validate();
    if (source_classes_raw.size() < 2) throw ConfigError("need at least 2 source class sets");
    if (data.kind != "synthetic" && data.kind != "external")
      throw ConfigError("data.kind must be synthetic or external");
    if (data.kind == "external" && data.root.empty())
      throw ConfigError("external data needs data.root");
    for (int raw : data.target_unknown_raw)
      for (const auto& s : source_classes_raw)
        for (int c : s)
          if (c == raw)
            throw ConfigError("unknown class " + std::to_string(raw) +
                              " appears in a source label set");
  }
};

namespace config_io {

inline StyleSpec style_from_json(const json& j) {
  StyleSpec s;
  s.bg_hue = j.value("bg_hue", s.bg_hue);
  s.bg_value = j.value("bg_value", s.bg_value);
  s.bg_contrast = j.value("bg_contrast", s.bg_contrast);
  s.pattern_id = j.value("pattern", s.pattern_id);
  s.pattern_period = j.value("period", s.pattern_period);
  s.noise_level = j.value("noise", s.noise_level);
  s.hue_jitter = j.value("hue_jitter", s.hue_jitter);
  s.value_jitter = j.value("value_jitter", s.value_jitter);
  s.stroke_jitter = j.value("stroke_jitter", s.stroke_jitter);
  if (j.contains("stroke")) {
    auto v = j.at("stroke").get<std::vector<float>>();
    if (v.size() != 3) throw ConfigError("style stroke needs 3 components");
    s.stroke_color = {v[0], v[1], v[2]};
  }
  return s;
}

inline json style_to_json(const StyleSpec& s) {
  return json{{"bg_hue", s.bg_hue},   {"bg_value", s.bg_value}, {"bg_contrast", s.bg_contrast},
              {"pattern", s.pattern_id}, {"period", s.pattern_period}, {"noise", s.noise_level},
              {"hue_jitter", s.hue_jitter}, {"value_jitter", s.value_jitter},
              {"stroke_jitter", s.stroke_jitter},
              {"stroke", std::vector<float>{s.stroke_color[0], s.stroke_color[1],
                                            s.stroke_color[2]}}};
}

inline ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  try {
    const json& task = j.at("task");
    c.source_classes_raw = task.at("source_classes").get<std::vector<std::vector<int>>>();
    if (task.contains("domain_names"))
      c.domain_names = task.at("domain_names").get<std::vector<std::string>>();
    c.target_has_unknown = task.value("target_has_unknown", true);

    if (j.contains("data")) {
      const json& d = j.at("data");
      c.data.kind = d.value("kind", c.data.kind);
      c.data.root = d.value("root", c.data.root);
      c.data.n_per_class = d.value("n_per_class", c.data.n_per_class);
      c.data.n_test_per_class = d.value("n_test_per_class", c.data.n_test_per_class);
      c.data.image_hw = d.value("image_size", c.data.image_hw);
      if (d.contains("target_unknown"))
        c.data.target_unknown_raw = d.at("target_unknown").get<std::vector<int>>();
      if (d.contains("styles"))
        for (const auto& s : d.at("styles")) c.data.styles.push_back(style_from_json(s));
    }

    if (j.contains("model")) {
      const json& m = j.at("model");
      c.model_preset = m.value("preset", c.model_preset);
      if (m.contains("latent_d")) c.latent_d = m.at("latent_d").get<int>();
      if (m.contains("latent_s")) c.latent_s = m.at("latent_s").get<int>();
      if (m.contains("embed_dim")) c.embed_dim = m.at("embed_dim").get<int>();
      if (m.contains("res_blocks")) c.res_blocks = m.at("res_blocks").get<int>();
    }

    if (j.contains("train")) {
      const json& t = j.at("train");
      TrainConfig& tc = c.train;
      tc.epochs = t.value("epochs", tc.epochs);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.weight_decay = t.value("weight_decay", tc.weight_decay);
      c.dropout = t.value("dropout", c.dropout);
      tc.beta = t.value("beta", tc.beta);
      tc.xi = t.value("xi", tc.xi);
      tc.lambda = t.value("lambda", tc.lambda);
      tc.gamma = t.value("gamma", tc.gamma);
      tc.delta_known = t.value("delta_known", tc.delta_known);
      tc.delta_unk = t.value("delta_unk", tc.delta_unk);
      tc.seed = t.value("seed", tc.seed);
      tc.checkpoint_every = t.value("checkpoint_every", tc.checkpoint_every);
      tc.disable_pseudo = t.value("disable_pseudo", tc.disable_pseudo);
      tc.pseudo_warmup_epochs = t.value("pseudo_warmup", tc.pseudo_warmup_epochs);
      if (t.contains("alpha_const") && !t.at("alpha_const").is_null())
        tc.alpha_const = t.at("alpha_const").get<double>();
    }

    if (j.contains("flags")) {
      const json& f = j.at("flags");
      c.train.disable_exemplar = f.value("disable_exemplar", false);
      c.train.disable_disentangle = f.value("disable_disentangle", false);
    }

    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      if (s.contains("alpha")) c.sweep_alpha = s.at("alpha").get<std::vector<double>>();
      if (s.contains("gamma")) c.sweep_gamma = s.at("gamma").get<std::vector<double>>();
    }

    c.out_dir = j.value("out", c.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = {{"source_classes", c.source_classes_raw},
               {"target_has_unknown", c.target_has_unknown}};
  if (!c.domain_names.empty()) j["task"]["domain_names"] = c.domain_names;
  json styles = json::array();
  for (const auto& s : c.data.styles) styles.push_back(style_to_json(s));
  j["data"] = {{"kind", c.data.kind},
               {"root", c.data.root},
               {"n_per_class", c.data.n_per_class},
               {"n_test_per_class", c.data.n_test_per_class},
               {"image_size", c.data.image_hw},
               {"target_unknown", c.data.target_unknown_raw},
               {"styles", styles}};
  j["model"] = {{"preset", c.model_preset}};
  if (c.latent_d) j["model"]["latent_d"] = *c.latent_d;
  if (c.latent_s) j["model"]["latent_s"] = *c.latent_s;
  if (c.embed_dim) j["model"]["embed_dim"] = *c.embed_dim;
  if (c.res_blocks) j["model"]["res_blocks"] = *c.res_blocks;
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"dropout", c.dropout},
                {"beta", c.train.beta},
                {"xi", c.train.xi},
                {"lambda", c.train.lambda},
                {"gamma", c.train.gamma},
                {"delta_known", c.train.delta_known},
                {"delta_unk", c.train.delta_unk},
                {"seed", c.train.seed},
                {"checkpoint_every", c.train.checkpoint_every},
                {"disable_pseudo", c.train.disable_pseudo},
                {"pseudo_warmup", c.train.pseudo_warmup_epochs}};
  if (c.train.alpha_const) j["train"]["alpha_const"] = *c.train.alpha_const;
  j["flags"] = {{"disable_exemplar", c.train.disable_exemplar},
                {"disable_disentangle", c.train.disable_disentangle}};
  j["sweep"] = {{"alpha", c.sweep_alpha}, {"gamma", c.sweep_gamma}};
  j["out"] = c.out_dir;
  return j;
}

}  // namespace config_io
}  // namespace vdd

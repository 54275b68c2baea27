#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vdd/core/adam.hpp"
#include "vdd/core/memory.hpp"
#include "vdd/core/serialize.hpp"
#include "vdd/data.hpp"
#include "vdd/errors.hpp"
#include "vdd/losses.hpp"
#include "vdd/model.hpp"
#include "vdd/task.hpp"

namespace vdd {

// Outcome of thresholding one target sample's prediction.
struct PseudoLabelDecision {
  static constexpr int kAbstain = -1;
  int label = kAbstain;  // 0..C-1 known, C unknown, kAbstain otherwise
  double confidence = 0.0;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 2e-4;
  double weight_decay = 5e-4;
  double beta = 6.0;
  double xi = 1.0;
  double lambda = 2.0;
  double gamma = 1.0;
  double delta_known = 0.9;
  double delta_unk = 0.3;
  uint64_t seed = 1;
  std::optional<double> alpha_const;  // overrides the progressive schedule
  bool disable_exemplar = false;      // ablation "w/o L_exe": alpha == 0
  bool disable_disentangle = false;   // ablation "w/o disent": closed-form KL on z_d
  bool disable_pseudo = false;        // drops L_pseudo from the objective
  int pseudo_warmup_epochs = 0;       // epochs before L_pseudo activates
  int checkpoint_every = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(0.0 <= delta_unk && delta_unk < delta_known && delta_known <= 1.0))
      throw ConfigError("thresholds must satisfy 0 <= delta_unk < delta_known <= 1");
  }
};

// ------------------------------------------------------------------
// Classification losses and the pseudo-labeling rule
// ------------------------------------------------------------------

// Confidence is the max over the C known-class probabilities; the unknown
// slot is populated purely by the low-confidence rule. Ties resolve to the
// lowest class index.
inline std::vector<PseudoLabelDecision> assign_pseudo_labels(const Tensor<float>& probs,
                                                             double delta_known,
                                                             double delta_unk) {
  const int64_t rows = probs.dim(0);
  const int64_t cols = probs.dim(1);
  const int known = static_cast<int>(cols) - 1;
  std::vector<PseudoLabelDecision> out(rows);
  for (int64_t i = 0; i < rows; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < cols; ++j) sum += probs[i * cols + j];
    if (std::abs(sum - 1.0) > 1e-4)
      throw TrainingError("probability row " + std::to_string(i) + " sums to " +
                          std::to_string(sum));
    int arg = 0;
    double best = probs[i * cols];
    for (int j = 1; j < known; ++j)
      if (probs[i * cols + j] > best) {
        best = probs[i * cols + j];
        arg = j;
      }
    out[i].confidence = best;
    if (best > delta_known)
      out[i].label = arg;
    else if (best < delta_unk)
      out[i].label = known;  // the collapsed unknown class C
  }
  return out;
}

// Eq. (6): cross-entropy against pseudo labels, averaged over the
// non-abstaining rows only; zero when everything abstained.
template <typename T>
Var<T> pseudo_loss(const Var<T>& target_logp, const std::vector<PseudoLabelDecision>& decisions) {
  const int64_t rows = target_logp.val().dim(0);
  std::vector<int> labels(rows, 0);
  std::vector<T> weights(rows, T(0));
  int used = 0;
  for (int64_t i = 0; i < rows; ++i) {
    if (decisions[i].label != PseudoLabelDecision::kAbstain) {
      labels[i] = decisions[i].label;
      weights[i] = T(1);
      ++used;
    }
  }
  if (used == 0) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  return ops::masked_nll(target_logp, std::move(labels), std::move(weights),
                         static_cast<T>(used));
}

// Eq. (7): mean Shannon entropy of the full C+1 prediction, in nats.
template <typename T>
Var<T> target_entropy(const Var<T>& logp) {
  const int64_t rows = logp.val().dim(0);
  const int64_t cols = logp.val().dim(1);
  auto p = ops::exp(logp);
  auto plogp = ops::mul(p, logp);
  return ops::scale(ops::sum_all(ops::sum_last(plogp, cols)), T(-1) / static_cast<T>(rows));
}

// Eq. (8): mean cross-entropy on labeled source rows.
template <typename T>
Var<T> source_ce(const Var<T>& logp, const std::vector<int>& labels) {
  const int64_t rows = logp.val().dim(0);
  const int known = static_cast<int>(logp.val().dim(1)) - 1;
  for (int y : labels)
    if (y < 0 || y >= known)
      throw TrainingError("source label " + std::to_string(y) +
                          " outside the known classes (sources never carry the unknown class)");
  return ops::masked_nll(logp, labels, std::vector<T>(rows, T(1)), static_cast<T>(rows));
}

// alpha = m / (2M), m = completed epochs; reaches 0.5 at the end of the run.
inline double alpha_schedule(int completed_epochs, int total_epochs) {
  if (total_epochs <= 0) throw TrainingError("total epochs must be positive");
  if (completed_epochs < 0 || completed_epochs > total_epochs)
    throw TrainingError("epoch index out of range");
  return static_cast<double>(completed_epochs) / (2.0 * total_epochs);
}

// mu = mu0 / (1 + 10 p)^0.75 with p = completed / total epochs.
inline double lr_schedule(double progress, double mu0) {
  if (progress < 0.0 || progress > 1.0) throw TrainingError("progress outside [0,1]");
  return mu0 / std::pow(1.0 + 10.0 * progress, 0.75);
}

// Uniform fake-domain draw: any source other than the sample's own domain
// (the target's own index is never a source, so all sources qualify).
inline int draw_fake_domain(const GmdaTask& task, int true_domain, Rng& rng) {
  const int n = task.num_sources();
  if (true_domain >= n) return static_cast<int>(rng.uniform_int(n));
  if (n < 2) throw TrainingError("fake domains need at least 2 sources");
  int pick = static_cast<int>(rng.uniform_int(n - 1));
  if (pick >= true_domain) ++pick;
  return pick;
}

// ------------------------------------------------------------------
// Training loop
// ------------------------------------------------------------------

inline const char* kMetricsHeader =
    "epoch,step,recon,kl_sample,mi_domain,tc_domain,dimkl_domain,exemplar,source_ce,"
    "target_entropy,pseudo_ce,total,n_known,n_unknown,n_abstain,lr,alpha";

struct StepCounts {
  int n_known = 0, n_unknown = 0, n_abstain = 0;
};

namespace detail_train {

inline std::string metrics_row(int epoch, int step, const LossBreakdown<float>& lb,
                               const StepCounts& counts, double lr, double alpha) {
  std::ostringstream os;
  os << epoch << ',' << step << ',' << std::setprecision(9);
  os << lb.recon << ',' << lb.kl_sample << ',' << lb.mi_domain << ',' << lb.tc_domain << ','
     << lb.dimkl_domain << ',' << lb.exemplar << ',' << lb.source_ce << ','
     << lb.target_entropy << ',' << lb.pseudo_ce << ',' << lb.total << ',';
  os << counts.n_known << ',' << counts.n_unknown << ',' << counts.n_abstain << ','
     << lr << ',' << alpha;
  return os.str();
}

// Keeps only the rows of completed epochs <= last_epoch (resume support).
inline void truncate_metrics(const std::string& path, int last_epoch) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (keep.empty()) {
      keep.push_back(line);  // header
      continue;
    }
    const int epoch = std::atoi(line.c_str());
    if (epoch <= last_epoch) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace detail_train

// One optimization run over N source train sets plus the target train set
// (order: sources 0..N-1, then target). Writes per-step metrics and one
// checkpoint per `checkpoint_every` epochs under `run_dir`; an existing
// last.ckpt resumes the run from the epoch after the one it recorded.
class Trainer {
 public:
  Trainer(TrainConfig cfg, ModelConfig model_cfg, const GmdaTask& task)
      : cfg_(cfg), task_(task), model_(model_cfg, task.num_domains(),
                                       task.num_known_classes(), cfg.seed) {
    cfg_.validate();
    tune_allocator();
  }

  VddModel<float>& model() { return model_; }

  int train(const std::vector<const DomainDataset*>& train_sets, const ExemplarPool& pool,
            const std::string& run_dir) {
    namespace fs = std::filesystem;
    if (static_cast<int>(train_sets.size()) != task_.num_domains())
      throw TrainingError("expected one train set per domain");
    fs::create_directories(fs::path(run_dir) / "checkpoints");

    BatchStream stream(train_sets, cfg_.batch_size, cfg_.seed);
    EstimatorContext ctx;
    for (const auto* ds : train_sets) ctx.dataset_size += ds->size();

    AdamW<float> adam(model_.params());
    int start_epoch = 0;
    const std::string last_ckpt = (fs::path(run_dir) / "checkpoints" / "last.ckpt").string();
    const std::string metrics_path = (fs::path(run_dir) / "metrics.csv").string();
    if (fs::exists(last_ckpt)) {
      auto state = load_tensor_map<float>(last_ckpt);
      model_.import_state(state);
      adam.import_state(model_.params(), state);
      start_epoch = static_cast<int>(state.at("meta/epochs_completed")[0]);
      detail_train::truncate_metrics(metrics_path, start_epoch - 1);
    } else {
      std::ofstream head(metrics_path, std::ios::trunc);
      head << kMetricsHeader << '\n';
    }

    std::ofstream metrics(metrics_path, std::ios::app);
    for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
      const double alpha =
          cfg_.disable_exemplar
              ? 0.0
              : cfg_.alpha_const.value_or(alpha_schedule(epoch, cfg_.epochs));
      const double lr =
          lr_schedule(static_cast<double>(epoch) / cfg_.epochs, cfg_.learning_rate);
      for (int step = 0; step < stream.steps_per_epoch(); ++step) {
        auto [lb, counts] = train_step(stream.batch(epoch, step), train_sets, pool, ctx,
                                       static_cast<float>(alpha), epoch, step);
        adam.step(model_.params(), static_cast<float>(lr),
                  static_cast<float>(cfg_.weight_decay));
        metrics << detail_train::metrics_row(epoch, step, lb, counts, lr, alpha) << '\n';
      }
      metrics.flush();
      if ((epoch + 1) % cfg_.checkpoint_every == 0 || epoch + 1 == cfg_.epochs) {
        save_checkpoint(run_dir, adam, epoch + 1);
      }
    }
    return cfg_.epochs;
  }

  void save_checkpoint(const std::string& run_dir, const AdamW<float>& adam,
                       int epochs_completed) {
    namespace fs = std::filesystem;
    std::map<std::string, Tensor<float>> state;
    model_.export_state(state);
    adam.export_state(model_.params(), state);
    state["meta/epochs_completed"] = Tensor<float>::scalar(static_cast<float>(epochs_completed));
    state["meta/seed"] = Tensor<float>::scalar(static_cast<float>(cfg_.seed));
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epochs_completed);
    const auto path = fs::path(run_dir) / "checkpoints" / name;
    save_tensor_map(path.string(), state);
    fs::copy_file(path, fs::path(run_dir) / "checkpoints" / "last.ckpt",
                  fs::copy_options::overwrite_existing);
  }

 private:
  std::pair<LossBreakdown<float>, StepCounts> train_step(
      const TrainBatch& batch, const std::vector<const DomainDataset*>& train_sets,
      const ExemplarPool& pool, const EstimatorContext& ctx, float alpha, int epoch, int step) {
    using V = Var<float>;
    const int num_domains = task_.num_domains();
    const int target = task_.target_index();
    const int b = cfg_.batch_size;
    const int b_total = b * num_domains;
    const int hw = model_.config().image_hw;

    // Assemble the joint batch: sources first, target last.
    Tensor<float> images = Tensor<float>::uninit({b_total, hw, hw, 3});
    std::vector<int> domain_of(b_total);
    std::vector<int> label_of(b_total, -1);  // source labels; -1 for target
    int row = 0;
    for (int d = 0; d < num_domains; ++d) {
      const DomainDataset* ds = train_sets[d];
      for (int idx : batch.indices[d]) {
        std::copy_n(ds->images[idx].pix.data(), hw * hw * 3,
                    images.data() + static_cast<int64_t>(row) * hw * hw * 3);
        domain_of[row] = d;
        if (d != target) label_of[row] = (*ds->labels)[idx];
        ++row;
      }
    }

    Rng reparam_rng = Rng::derive(cfg_.seed, Stream::kReparam, epoch, step);
    Rng dropout_rng = Rng::derive(cfg_.seed, Stream::kDropout, epoch, step);
    Rng fake_rng = Rng::derive(cfg_.seed, Stream::kFakeDomain, epoch, step);
    Rng exemplar_rng = Rng::derive(cfg_.seed, Stream::kExemplar, epoch, step);

    auto x = V::constant(images);
    auto z_s = model_.encode_sample(x, &reparam_rng, true);
    auto z_d = model_.encode_domain(domain_of, &reparam_rng, true);
    auto x_hat = model_.decode(z_s.value, z_d.value, true);
    // The classifier reads the posterior mean, matching the evaluation path;
    // the reparameterized sample feeds the decoder.
    auto logp = model_.classify_logp(z_s.mean, &dropout_rng, true);

    const bool no_disent = cfg_.disable_disentangle;
    auto vae = losses::vae_loss(x, x_hat, z_s, z_d, static_cast<float>(cfg_.beta),
                                static_cast<float>(cfg_.xi), ctx, no_disent);

    // Source cross-entropy over all labeled rows.
    std::vector<int> ce_labels(b_total, 0);
    std::vector<float> ce_weights(b_total, 0.f);
    int n_source_rows = 0;
    for (int i = 0; i < b_total; ++i)
      if (label_of[i] >= 0) {
        ce_labels[i] = label_of[i];
        ce_weights[i] = 1.f;
        ++n_source_rows;
      }
    auto src_ce =
        ops::masked_nll(logp, std::move(ce_labels), std::move(ce_weights),
                        static_cast<float>(n_source_rows));

    // Target rows: entropy regularizer plus online pseudo labeling.
    std::vector<int64_t> target_rows;
    for (int i = 0; i < b_total; ++i)
      if (domain_of[i] == target) target_rows.push_back(i);
    auto tgt_logp = ops::gather_rows(logp, target_rows);
    auto entropy = target_entropy(tgt_logp);

    Tensor<float> tgt_probs = tgt_logp.val();
    for (int64_t i = 0; i < tgt_probs.numel(); ++i) tgt_probs[i] = std::exp(tgt_probs[i]);
    auto decisions = assign_pseudo_labels(tgt_probs, cfg_.delta_known, cfg_.delta_unk);
    StepCounts counts;
    for (const auto& d : decisions) {
      if (d.label == PseudoLabelDecision::kAbstain)
        ++counts.n_abstain;
      else if (d.label == task_.unknown_index())
        ++counts.n_unknown;
      else
        ++counts.n_known;
    }
    const bool pseudo_active = !cfg_.disable_pseudo && epoch >= cfg_.pseudo_warmup_epochs;
    auto pseudo = pseudo_active ? pseudo_loss(tgt_logp, decisions)
                                : V::constant(Tensor<float>::scalar(0.f));

    // Exemplar path: per-sample fake domain, pool lookup with re-draw, fake
    // decode over the rows whose exemplar resolved.
    losses::VaeParts<float> exe;
    if (cfg_.disable_exemplar) {
      auto zero = V::constant(Tensor<float>::scalar(0.f));
      exe.recon = exe.kl_sample = exe.mi = exe.tc = exe.dimkl = exe.total = zero;
      exe.empty = true;
    } else {
      std::vector<int> fake_of(b_total);
      for (int i = 0; i < b_total; ++i)
        fake_of[i] = draw_fake_domain(task_, domain_of[i], fake_rng);

      std::vector<int64_t> resolved_rows;
      std::vector<int> resolved_domains;
      std::vector<const ImageTensor*> exemplar_imgs;
      int target_cursor = 0;
      for (int i = 0; i < b_total; ++i) {
        int cls;
        if (domain_of[i] != target) {
          cls = label_of[i];
        } else {
          const auto& d = decisions[target_cursor++];
          if (d.label == PseudoLabelDecision::kAbstain) continue;
          cls = d.label;  // unknown-class labels find no pool entry below
        }
        auto ref = lookup_exemplar(pool, fake_of[i], cls, domain_of[i], exemplar_rng);
        if (!ref) continue;
        resolved_rows.push_back(i);
        resolved_domains.push_back(ref->resolved_domain);
        exemplar_imgs.push_back(ref->image);
      }

      if (resolved_rows.empty()) {
        auto zero = V::constant(Tensor<float>::scalar(0.f));
        exe.recon = exe.kl_sample = exe.mi = exe.tc = exe.dimkl = exe.total = zero;
        exe.empty = true;
      } else {
        const int64_t m = static_cast<int64_t>(resolved_rows.size());
        Tensor<float> v = Tensor<float>::uninit({m, hw, hw, 3});
        for (int64_t i = 0; i < m; ++i)
          std::copy_n(exemplar_imgs[i]->pix.data(), hw * hw * 3,
                      v.data() + i * hw * hw * 3);
        auto z_s_sub = z_s.gather(resolved_rows);
        auto z_dprime = model_.encode_domain(resolved_domains, &reparam_rng, true);
        auto v_hat = model_.decode(z_s_sub.value, z_dprime.value, true);
        exe = losses::exemplar_loss(V::constant(std::move(v)), v_hat, z_s_sub, z_dprime,
                                    static_cast<float>(cfg_.beta),
                                    static_cast<float>(cfg_.xi), ctx, no_disent);
      }
    }

    losses::ObjectiveParts<float> parts{vae.total, exe.total, src_ce, entropy, pseudo};
    auto total = losses::combine_objective(parts, static_cast<float>(cfg_.lambda),
                                           static_cast<float>(cfg_.gamma), alpha);

    model_.params().zero_grad();
    backward(total);

    LossBreakdown<float> lb;
    lb.recon = vae.recon.item();
    lb.kl_sample = vae.kl_sample.item();
    lb.mi_domain = vae.mi.item();
    lb.tc_domain = vae.tc.item();
    lb.dimkl_domain = vae.dimkl.item();
    lb.exemplar = exe.total.item();
    lb.source_ce = src_ce.item();
    lb.target_entropy = entropy.item();
    lb.pseudo_ce = pseudo.item();
    lb.total = total.item();
    return {lb, counts};
  }

  TrainConfig cfg_;
  const GmdaTask& task_;
  VddModel<float> model_;
};

}  // namespace vdd

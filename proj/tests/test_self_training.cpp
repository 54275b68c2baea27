#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vdd/experiment.hpp"
#include "vdd/self_training.hpp"

using vdd::PseudoLabelDecision;
using vdd::Rng;
using vdd::Tensor;
using vdd::TrainingError;
using vdd::Var;

namespace {

Tensor<float> row6(std::initializer_list<float> vals) {
  Tensor<float> t({1, 6});
  int i = 0;
  for (float v : vals) t[i++] = v;
  return t;
}

// Straight-line reference for the thresholding rule.
int reference_decision(const std::vector<double>& p, double dk, double du) {
  const int known = static_cast<int>(p.size()) - 1;
  int arg = 0;
  for (int j = 1; j < known; ++j)
    if (p[j] > p[arg]) arg = j;
  if (p[arg] > dk) return arg;
  if (p[arg] < du) return known;
  return PseudoLabelDecision::kAbstain;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

vdd::ModelConfig tiny_model() {
  vdd::ModelConfig m;
  m.latent_d = 4;
  m.latent_s = 32;
  m.embed_dim = 8;
  m.enc_channels = {8, 12, 16};
  m.res_blocks_per_stage = 1;
  m.dropout = 0.5f;
  return m;
}

struct TinyExperiment {
  vdd::GmdaTask task = vdd::GmdaTask::build({{0, 1}, {1, 2}}, true, 3);
  std::vector<vdd::DomainDataset> sets;
  vdd::ExemplarPool pool;
  std::vector<const vdd::DomainDataset*> ptrs;

  explicit TinyExperiment(uint64_t seed = 3) {
    auto styles = vdd::make_default_styles(task.num_domains());
    for (int d = 0; d < task.num_domains(); ++d)
      sets.push_back(vdd::generate_synthetic_domain(task, d, styles[d], 24, seed,
                                                    vdd::Split::kTrain, {3}));
    for (auto& s : sets) ptrs.push_back(&s);
    pool = vdd::build_exemplar_pool({ptrs[0], ptrs[1]}, task, seed);
  }
};

vdd::TrainConfig tiny_train(int epochs, uint64_t seed) {
  vdd::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(AssignPseudoLabels, ThresholdExamples) {
  auto d = vdd::assign_pseudo_labels(row6({0.95f, 0.02f, 0.01f, 0.01f, 0.005f, 0.005f}), 0.9,
                                     0.3);
  EXPECT_EQ(d[0].label, 0);
  EXPECT_NEAR(d[0].confidence, 0.95, 1e-6);

  d = vdd::assign_pseudo_labels(row6({0.25f, 0.2f, 0.15f, 0.1f, 0.1f, 0.2f}), 0.9, 0.3);
  EXPECT_EQ(d[0].label, 5);  // the unknown index C

  d = vdd::assign_pseudo_labels(row6({0.5f, 0.2f, 0.1f, 0.1f, 0.05f, 0.05f}), 0.9, 0.3);
  EXPECT_EQ(d[0].label, PseudoLabelDecision::kAbstain);

  EXPECT_THROW(vdd::assign_pseudo_labels(row6({0.9f, 0.4f, 0, 0, 0, 0}), 0.9, 0.3),
               TrainingError);
}

// Exhaustive simplex grid (step 0.05) over C+1 = 6 classes against the
// straight-line reference; the two must agree everywhere.
TEST(AssignPseudoLabels, ExhaustiveSimplexGrid) {
  const int cells = 6, steps = 20;  // 20 * 0.05 = 1
  std::vector<int> comp(cells, 0);
  comp[0] = steps;
  int checked = 0;
  for (;;) {
    std::vector<double> p(cells);
    for (int i = 0; i < cells; ++i) p[i] = comp[i] / static_cast<double>(steps);
    Tensor<float> row({1, cells});
    for (int i = 0; i < cells; ++i) row[i] = static_cast<float>(p[i]);
    auto got = vdd::assign_pseudo_labels(row, 0.9, 0.3);
    EXPECT_EQ(got[0].label, reference_decision(p, 0.9, 0.3));
    ++checked;

    // next composition of `steps` into `cells` parts
    int k = cells - 2;
    while (k >= 0 && comp[k] == 0) --k;
    if (k < 0) break;
    --comp[k];
    int rest = comp[cells - 1] + 1;
    comp[cells - 1] = 0;
    comp[k + 1] = rest;
    for (int i = k + 2; i < cells; ++i) {
      comp[k + 1] += comp[i];
      comp[i] = 0;
    }
  }
  EXPECT_EQ(checked, 53130);  // C(25, 5)
}

TEST(PseudoLoss, EdgeCasesAndValues) {
  Tensor<double> logits({2, 6});
  Rng rng(4);
  rng.fill_normal(logits);
  auto logp = vdd::ops::log_softmax(Var<double>::constant(logits));

  std::vector<PseudoLabelDecision> all_abstain(2);
  EXPECT_EQ(vdd::pseudo_loss(logp, all_abstain).item(), 0.0);

  Tensor<double> p95({1, 6});
  for (int j = 0; j < 6; ++j) p95[j] = std::log(j == 0 ? 0.95 : 0.01);
  std::vector<PseudoLabelDecision> one{{0, 0.95}};
  auto lp = Var<double>::constant(p95);
  EXPECT_NEAR(vdd::pseudo_loss(lp, one).item(), -std::log(0.95), 1e-9);

  Tensor<double> hot({1, 6});
  for (int j = 0; j < 6; ++j) hot[j] = j == 2 ? 0.0 : -60.0;
  std::vector<PseudoLabelDecision> two{{2, 1.0}};
  EXPECT_NEAR(vdd::pseudo_loss(Var<double>::constant(hot), two).item(), 0.0, 1e-12);
}

// Abstained rows contribute exactly zero gradient through L_pseudo.
TEST(PseudoLoss, AbstainedRowsHaveZeroGradient) {
  Tensor<double> logits({3, 4});
  Rng rng(5);
  rng.fill_normal(logits);
  std::vector<PseudoLabelDecision> decisions{{1, 0.95}, {PseudoLabelDecision::kAbstain, 0.5},
                                             {3, 0.2}};

  auto with = Var<double>::param(logits);
  auto loss = vdd::pseudo_loss(vdd::ops::log_softmax(with), decisions);
  vdd::backward(loss);

  for (int j = 0; j < 4; ++j) EXPECT_EQ(with.grad()[1 * 4 + j], 0.0);

  // Removing the abstained row leaves the other rows' gradients unchanged.
  Tensor<double> reduced({2, 4});
  for (int j = 0; j < 4; ++j) {
    reduced[0 * 4 + j] = logits[0 * 4 + j];
    reduced[1 * 4 + j] = logits[2 * 4 + j];
  }
  auto without = Var<double>::param(reduced);
  std::vector<PseudoLabelDecision> kept{{1, 0.95}, {3, 0.2}};
  vdd::backward(vdd::pseudo_loss(vdd::ops::log_softmax(without), kept));
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(without.grad()[0 * 4 + j], with.grad()[0 * 4 + j], 1e-12);
    EXPECT_NEAR(without.grad()[1 * 4 + j], with.grad()[2 * 4 + j], 1e-12);
  }
}

TEST(TargetEntropy, ClosedFormsAndBound) {
  Tensor<double> hot({1, 6});
  for (int j = 0; j < 6; ++j) hot[j] = j == 0 ? 0.0 : -70.0;
  EXPECT_NEAR(vdd::target_entropy(Var<double>::constant(hot)).item(), 0.0, 1e-9);

  Tensor<double> uniform({1, 6}, std::log(1.0 / 6));
  EXPECT_NEAR(vdd::target_entropy(Var<double>::constant(uniform)).item(), std::log(6.0), 1e-9);

  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    Tensor<double> logits({5, 6});
    rng.fill_normal(logits, 2.0);
    auto ent = vdd::target_entropy(vdd::ops::log_softmax(Var<double>::constant(logits)));
    EXPECT_GE(ent.item(), -1e-9);
    EXPECT_LE(ent.item(), std::log(6.0) + 1e-9);
  }
}

TEST(SourceCe, ValuesMonotonicityAndGuard) {
  Tensor<double> hot({1, 6});
  for (int j = 0; j < 6; ++j) hot[j] = j == 1 ? 0.0 : -70.0;
  EXPECT_NEAR(vdd::source_ce(Var<double>::constant(hot), {1}).item(), 0.0, 1e-9);

  Tensor<double> uniform({1, 6}, std::log(1.0 / 6));
  EXPECT_NEAR(vdd::source_ce(Var<double>::constant(uniform), {3}).item(), std::log(6.0), 1e-9);

  // More mass on the true label lowers the loss.
  double prev = 1e9;
  for (double p : {0.3, 0.5, 0.7, 0.9}) {
    Tensor<double> row({1, 6});
    for (int j = 0; j < 6; ++j) row[j] = std::log(j == 2 ? p : (1 - p) / 5);
    const double ce = vdd::source_ce(Var<double>::constant(row), {2}).item();
    EXPECT_LT(ce, prev);
    prev = ce;
  }

  EXPECT_THROW(vdd::source_ce(Var<double>::constant(uniform), {5}), TrainingError);
}

TEST(Schedules, AlphaAndLearningRate) {
  EXPECT_EQ(vdd::alpha_schedule(0, 50), 0.0);
  EXPECT_EQ(vdd::alpha_schedule(50, 50), 0.5);
  EXPECT_EQ(vdd::alpha_schedule(25, 50), 0.25);
  EXPECT_THROW(vdd::alpha_schedule(1, 0), TrainingError);
  EXPECT_THROW(vdd::alpha_schedule(-1, 10), TrainingError);

  EXPECT_DOUBLE_EQ(vdd::lr_schedule(0.0, 2e-4), 2e-4);
  EXPECT_NEAR(vdd::lr_schedule(1.0, 2e-4), 2e-4 / std::pow(11.0, 0.75), 1e-12);
  EXPECT_NEAR(vdd::lr_schedule(1.0, 2e-4), 3.31e-5, 2e-7);
  double prev = 1.0;
  for (double p = 0; p <= 1.0; p += 0.05) {
    const double lr = vdd::lr_schedule(p, 2e-4);
    EXPECT_LT(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(vdd::lr_schedule(1.5, 2e-4), TrainingError);
}

TEST(FakeDomain, NeverTheTrueDomainAndUniformForTarget) {
  auto task = vdd::GmdaTask::build({{0}, {1}, {2}}, true, 1);
  Rng rng(9);
  std::vector<int> counts(3, 0);
  for (int t = 0; t < 3000; ++t) {
    for (int d = 0; d < 3; ++d) EXPECT_NE(vdd::draw_fake_domain(task, d, rng), d);
    ++counts[vdd::draw_fake_domain(task, task.target_index(), rng)];
  }
  for (int c : counts) EXPECT_NEAR(c / 3000.0, 1.0 / 3, 0.04);
}

TEST(TrainConfigValidate, ThresholdInvariants) {
  vdd::TrainConfig cfg;
  cfg.delta_known = 0.2;
  cfg.delta_unk = 0.3;
  EXPECT_THROW(cfg.validate(), vdd::ConfigError);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), vdd::ConfigError);
}

// ------------------------------------------------------------------
// Training-loop integration
// ------------------------------------------------------------------

TEST(TrainLoop, SmokeRunWritesMetricsAndCheckpoints) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "vdd_train_smoke";
  fs::remove_all(dir);

  TinyExperiment exp;
  vdd::Trainer trainer(tiny_train(2, 11), tiny_model(), exp.task);
  trainer.train(exp.ptrs, exp.pool, dir.string());

  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "epoch_0002.ckpt"));

  std::ifstream csv(dir / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, std::string(vdd::kMetricsHeader));
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 2 * 6);  // 2 epochs x floor(48 / 8) steps
  fs::remove_all(dir);
}

// Two runs, identical config and seed: byte-identical metrics.
TEST(TrainLoop, DeterministicMetrics) {
  namespace fs = std::filesystem;
  const auto d1 = fs::temp_directory_path() / "vdd_det_a";
  const auto d2 = fs::temp_directory_path() / "vdd_det_b";
  fs::remove_all(d1);
  fs::remove_all(d2);

  TinyExperiment exp;
  vdd::Trainer t1(tiny_train(2, 21), tiny_model(), exp.task);
  t1.train(exp.ptrs, exp.pool, d1.string());
  vdd::Trainer t2(tiny_train(2, 21), tiny_model(), exp.task);
  t2.train(exp.ptrs, exp.pool, d2.string());

  EXPECT_EQ(slurp((d1 / "metrics.csv").string()), slurp((d2 / "metrics.csv").string()));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

// A run interrupted at a checkpoint resumes and reproduces the uninterrupted
// run exactly (per-epoch derived RNG streams; optimizer state in checkpoint).
TEST(TrainLoop, ResumeMatchesUninterruptedRun) {
  namespace fs = std::filesystem;
  const auto full_dir = fs::temp_directory_path() / "vdd_resume_full";
  const auto part_dir = fs::temp_directory_path() / "vdd_resume_part";
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);

  TinyExperiment exp;
  vdd::Trainer full(tiny_train(3, 31), tiny_model(), exp.task);
  full.train(exp.ptrs, exp.pool, full_dir.string());

  // Same run, then wind the directory back to the end of epoch 2 as if the
  // process had died there: drop the newest checkpoint and the newer rows.
  vdd::Trainer first(tiny_train(3, 31), tiny_model(), exp.task);
  first.train(exp.ptrs, exp.pool, part_dir.string());
  fs::copy_file(part_dir / "checkpoints" / "epoch_0002.ckpt",
                part_dir / "checkpoints" / "last.ckpt",
                fs::copy_options::overwrite_existing);
  fs::remove(part_dir / "checkpoints" / "epoch_0003.ckpt");

  vdd::Trainer second(tiny_train(3, 31), tiny_model(), exp.task);  // resumes at epoch 2
  second.train(exp.ptrs, exp.pool, part_dir.string());

  EXPECT_EQ(slurp((full_dir / "metrics.csv").string()),
            slurp((part_dir / "metrics.csv").string()));
  EXPECT_TRUE(fs::exists(part_dir / "checkpoints" / "epoch_0003.ckpt"));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

// The exemplar ablation zeroes only the exemplar column during the first
// epoch (alpha starts at 0, so the optimizer trajectories coincide there).
TEST(TrainLoop, DisableExemplarZeroesOnlyThatColumn) {
  namespace fs = std::filesystem;
  const auto d1 = fs::temp_directory_path() / "vdd_abl_full";
  const auto d2 = fs::temp_directory_path() / "vdd_abl_noexe";
  fs::remove_all(d1);
  fs::remove_all(d2);

  TinyExperiment exp;
  vdd::Trainer full(tiny_train(1, 41), tiny_model(), exp.task);
  full.train(exp.ptrs, exp.pool, d1.string());
  auto cfg = tiny_train(1, 41);
  cfg.disable_exemplar = true;
  vdd::Trainer ablated(cfg, tiny_model(), exp.task);
  ablated.train(exp.ptrs, exp.pool, d2.string());

  std::ifstream a(d1 / "metrics.csv"), b(d2 / "metrics.csv");
  std::string la, lb;
  std::getline(a, la);
  std::getline(b, lb);  // header
  int rows = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la.empty()) continue;
    std::vector<std::string> ca, cb;
    std::stringstream sa(la), sb(lb);
    std::string tok;
    while (std::getline(sa, tok, ',')) ca.push_back(tok);
    while (std::getline(sb, tok, ',')) cb.push_back(tok);
    ASSERT_EQ(ca.size(), cb.size());
    for (size_t i = 0; i < ca.size(); ++i) {
      if (i == 7) {  // exemplar column
        EXPECT_NE(std::stod(ca[i]), 0.0);
        EXPECT_EQ(std::stod(cb[i]), 0.0);
      } else {
        EXPECT_EQ(ca[i], cb[i]) << "column " << i;
      }
    }
    ++rows;
  }
  EXPECT_GT(rows, 0);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdd/data.hpp"
#include "vdd/errors.hpp"
#include "vdd/image_io.hpp"
#include "vdd/model.hpp"

namespace vdd {

// Open-set evaluation report. Per-class accuracy is per-class recall; OS
// averages all C+1 recalls, OS* the known ones, UNK is the unknown recall.
// Classes absent from the test set are excluded from the averages (their
// per-class entry is NaN).
struct EvalReport {
  std::vector<double> per_class_acc;            // length C+1
  double os = 0, os_star = 0, unk = 0, h_score = 0;
  std::vector<std::vector<int64_t>> confusion;  // rows: truth, cols: prediction
  int64_t n_samples = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["per_class_acc"] = per_class_acc;
    j["os"] = os;
    j["os_star"] = os_star;
    j["unk"] = unk;
    j["h_score"] = h_score;
    j["confusion"] = confusion;
    j["n_samples"] = n_samples;
    return j;
  }
};

namespace eval {

inline std::vector<std::vector<int64_t>> confusion_matrix(const std::vector<int>& preds,
                                                          const std::vector<int>& truths,
                                                          int num_known) {
  if (preds.size() != truths.size()) throw EvalError("prediction/truth length mismatch");
  const int n = num_known + 1;
  std::vector<std::vector<int64_t>> m(n, std::vector<int64_t>(n, 0));
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= n || truths[i] < 0 || truths[i] >= n)
      throw EvalError("class index out of range at sample " + std::to_string(i));
    ++m[truths[i]][preds[i]];
  }
  return m;
}

struct OsScores {
  double os, os_star, unk;
  std::vector<double> per_class;
};

inline OsScores os_scores(const std::vector<std::vector<int64_t>>& confusion) {
  const int n = static_cast<int>(confusion.size());
  const int known = n - 1;
  OsScores s{0, 0, 0, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN())};
  double sum_all = 0, sum_known = 0;
  int present_all = 0, present_known = 0;
  for (int c = 0; c < n; ++c) {
    int64_t row = 0;
    for (int64_t v : confusion[c]) row += v;
    if (row == 0) continue;  // class absent from the test set: excluded
    const double recall = static_cast<double>(confusion[c][c]) / static_cast<double>(row);
    s.per_class[c] = recall;
    sum_all += recall;
    ++present_all;
    if (c < known) {
      sum_known += recall;
      ++present_known;
    }
  }
  if (present_all == 0) throw EvalError("empty confusion matrix");
  s.os = sum_all / present_all;
  s.os_star = present_known > 0 ? sum_known / present_known
                                : std::numeric_limits<double>::quiet_NaN();
  s.unk = s.per_class[known];
  return s;
}

// Harmonic mean of known-class and unknown recall; 0 at (0, 0).
inline double h_score(double os_star, double unk) {
  if (os_star + unk <= 0) return 0.0;
  return 2.0 * os_star * unk / (os_star + unk);
}

// Test-time decision rule: argmax over the known classes, overridden to the
// unknown class when the known confidence falls below delta_unk. Matches the
// pseudo-labeling rule with abstentions mapped to the argmax (evaluation
// never abstains).
inline int decide(const float* probs, int num_known, double delta_unk) {
  int arg = 0;
  float best = probs[0];
  for (int j = 1; j < num_known; ++j)
    if (probs[j] > best) {
      best = probs[j];
      arg = j;
    }
  return best < delta_unk ? num_known : arg;
}

template <typename T>
std::vector<int> predict(VddModel<T>& model, const DomainDataset& data, double delta_unk,
                         int chunk = 256) {
  const int hw = model.config().image_hw;
  const int n_classes = model.num_classes();
  std::vector<int> preds;
  preds.reserve(data.size());
  for (int begin = 0; begin < data.size(); begin += chunk) {
    const int m = std::min(chunk, data.size() - begin);
    Tensor<T> images = Tensor<T>::uninit({m, hw, hw, 3});
    for (int i = 0; i < m; ++i)
      for (int64_t px = 0; px < static_cast<int64_t>(hw) * hw * 3; ++px)
        images[static_cast<int64_t>(i) * hw * hw * 3 + px] =
            static_cast<T>(data.images[begin + i].pix[px]);
    auto z_s = model.encode_sample(Var<T>::constant(std::move(images)), nullptr, false);
    auto probs = model.classify(z_s.mean, nullptr, false);
    std::vector<float> row(n_classes);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n_classes; ++j)
        row[j] = static_cast<float>(probs.val()[static_cast<int64_t>(i) * n_classes + j]);
      preds.push_back(decide(row.data(), n_classes - 1, delta_unk));
    }
  }
  return preds;
}

template <typename T>
EvalReport evaluate(VddModel<T>& model, const DomainDataset& target_test, const GmdaTask& task,
                    double delta_unk) {
  if (!target_test.hidden_labels)
    throw EvalError("target test split carries no hidden ground-truth labels");
  auto preds = predict(model, target_test, delta_unk);
  EvalReport report;
  report.confusion = confusion_matrix(preds, *target_test.hidden_labels,
                                      task.num_known_classes());
  auto scores = os_scores(report.confusion);
  report.per_class_acc = scores.per_class;
  report.os = scores.os;
  report.os_star = scores.os_star;
  report.unk = scores.unk;
  report.h_score = h_score(scores.os_star, scores.unk);
  report.n_samples = static_cast<int64_t>(preds.size());
  return report;
}

// Emits grids of (x, reconstruction, fake reconstruction) triplet rows.
template <typename T>
std::vector<std::string> reconstruction_gallery(VddModel<T>& model,
                                                const std::vector<const ImageTensor*>& samples,
                                                const std::vector<int>& domains,
                                                const std::vector<int>& fake_domains,
                                                const std::string& out_dir,
                                                int rows_per_grid = 8) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const int hw = model.config().image_hw;
  const int n = static_cast<int>(samples.size());

  Tensor<T> images = Tensor<T>::uninit({n, hw, hw, 3});
  for (int i = 0; i < n; ++i)
    for (int64_t px = 0; px < static_cast<int64_t>(hw) * hw * 3; ++px)
      images[static_cast<int64_t>(i) * hw * hw * 3 + px] = static_cast<T>(samples[i]->pix[px]);
  auto z_s = model.encode_sample(Var<T>::constant(std::move(images)), nullptr, false);
  auto z_d = model.encode_domain(domains, nullptr, false);
  auto z_df = model.encode_domain(fake_domains, nullptr, false);
  auto x_hat = model.decode(z_s.mean, z_d.mean, false);
  auto x_fake = model.decode(z_s.mean, z_df.mean, false);

  auto to_image = [hw](const Tensor<T>& t, int i) {
    ImageTensor img(hw, hw, 3);
    for (int64_t px = 0; px < static_cast<int64_t>(hw) * hw * 3; ++px)
      img.pix[px] = static_cast<float>(t[static_cast<int64_t>(i) * hw * hw * 3 + px]);
    return img;
  };

  std::vector<std::string> files;
  std::vector<ImageTensor> grid_rows;
  int grid_index = 0;
  auto flush = [&]() {
    if (grid_rows.empty()) return;
    char name[32];
    std::snprintf(name, sizeof(name), "gallery_%03d.ppm", grid_index++);
    const std::string path = (fs::path(out_dir) / name).string();
    write_ppm(path, stack_rows(grid_rows));
    files.push_back(path);
    grid_rows.clear();
  };
  for (int i = 0; i < n; ++i) {
    const ImageTensor rec = to_image(x_hat.val(), i);
    const ImageTensor fake = to_image(x_fake.val(), i);
    grid_rows.push_back(tile_row({samples[i], &rec, &fake}));
    if (static_cast<int>(grid_rows.size()) == rows_per_grid) flush();
  }
  flush();
  return files;
}

}  // namespace eval
}  // namespace vdd

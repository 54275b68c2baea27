#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vdd/core/rng.hpp"
#include "vdd/errors.hpp"
#include "vdd/task.hpp"

namespace vdd {

// HWC float image, values in [0, 1].
struct ImageTensor {
  int height = 0, width = 0, channels = 0;
  std::vector<float> pix;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c) : height(h), width(w), channels(c), pix(h * w * c, 0.f) {}

  float& at(int y, int x, int c) { return pix[(y * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pix[(y * width + x) * channels + c]; }
};

enum class Split { kTrain, kTest };

inline const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

// One domain's data. `labels` drives training and is absent for the target;
// `hidden_labels` carries ground truth (unknowns collapsed to unknown_index)
// for evaluation only. `raw_labels` keeps original class ids for export.
struct DomainDataset {
  int domain_index = 0;
  Split split = Split::kTrain;
  int height = 32, width = 32, channels = 3;
  std::vector<ImageTensor> images;
  std::optional<std::vector<int>> labels;
  std::optional<std::vector<int>> hidden_labels;
  std::optional<std::vector<int>> raw_labels;

  int size() const { return static_cast<int>(images.size()); }
};

// ------------------------------------------------------------------
// Synthetic domains: "class" is a glyph shape, "domain" is a rendering
// style (background hue/texture, stroke color, noise). Glyph geometry is
// derived only from (seed, class, instance), never from the style, so the
// same instance re-rendered under another style keeps its geometry.
// ------------------------------------------------------------------

struct StyleSpec {
  float bg_hue = 0.60f;                             // HSV hue of the background base tone
  float bg_value = 0.35f;                           // base tone brightness
  float bg_contrast = 0.25f;                        // second tone offset used by patterns
  int pattern_id = 0;                               // 0 solid 1 hstripe 2 vstripe 3 checker 4 diag 5 vgrad
  int pattern_period = 6;                           // pattern cell size in px
  float noise_level = 0.02f;                        // additive uniform noise amplitude
  std::array<float, 3> stroke_color{0.95f, 0.90f, 0.25f};
  // Per-image jitter ranges; domains are style distributions, not points,
  // mirroring the within-domain variance of the digit benchmarks.
  float hue_jitter = 0.05f;
  float value_jitter = 0.08f;
  float stroke_jitter = 0.12f;
};

namespace synth {

struct Seg {
  float x0, y0, x1, y1;
};

struct Glyph {
  std::vector<Seg> segs;
  float circle_radius = 0.f;  // > 0 adds a circle outline at the origin
};

inline const Glyph& glyph_catalog(int raw_class) {
  static const std::vector<Glyph> catalog = {
      {{}, 0.62f},                                                          // 0 ring
      {{{-0.65f, 0, 0.65f, 0}, {0, -0.65f, 0, 0.65f}}, 0.f},                // 1 plus
      {{{0, -0.7f, 0.65f, 0.55f}, {0.65f, 0.55f, -0.65f, 0.55f},            // 2 triangle
        {-0.65f, 0.55f, 0, -0.7f}},
       0.f},
      {{{-0.55f, -0.55f, 0.55f, -0.55f}, {0.55f, -0.55f, 0.55f, 0.55f},     // 3 square
        {0.55f, 0.55f, -0.55f, 0.55f}, {-0.55f, 0.55f, -0.55f, -0.55f}},
       0.f},
      {{{-0.55f, -0.55f, 0.55f, 0.55f}, {-0.55f, 0.55f, 0.55f, -0.55f}}, 0.f},  // 4 X
      {{{-0.6f, -0.3f, 0.6f, -0.3f}, {-0.6f, 0.3f, 0.6f, 0.3f}}, 0.f},          // 5 two bars
      {{{0, -0.65f, 0, 0.65f}}, 0.f},                                           // 6 vbar
      {{{0, -0.75f, 0.75f, 0}, {0.75f, 0, 0, 0.75f}, {0, 0.75f, -0.75f, 0},     // 7 diamond
        {-0.75f, 0, 0, -0.75f}},
       0.f},
      {{{-0.6f, -0.55f, 0.6f, -0.55f}, {0, -0.55f, 0, 0.65f}}, 0.f},            // 8 T
      {{{-0.45f, -0.65f, -0.45f, 0.55f}, {-0.45f, 0.55f, 0.5f, 0.55f}}, 0.f},   // 9 L
  };
  if (raw_class < 0 || raw_class >= static_cast<int>(catalog.size()))
    throw DataError("synthetic generator supports raw classes 0.." +
                    std::to_string(catalog.size() - 1) + ", got " + std::to_string(raw_class));
  return catalog[raw_class];
}

inline float point_segment_dist(float px, float py, const Seg& s) {
  const float dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const float len2 = dx * dx + dy * dy;
  float t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.f;
  t = std::clamp(t, 0.f, 1.f);
  const float qx = s.x0 + t * dx - px, qy = s.y0 + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

// Anti-aliased stroke mask of one glyph instance. The mask depends only on
// (seed, raw_class, instance).
inline ImageTensor glyph_mask(int raw_class, uint64_t instance, uint64_t seed, int hw = 32) {
  const Glyph& glyph = glyph_catalog(raw_class);
  Rng rng = Rng::derive(seed, Stream::kGlyph, static_cast<uint64_t>(raw_class), instance);
  const float cx = hw / 2.f + static_cast<float>(rng.uniform(-1.2, 1.2));
  const float cy = hw / 2.f + static_cast<float>(rng.uniform(-1.2, 1.2));
  const float scale = (hw / 2.f - 2.5f) * static_cast<float>(rng.uniform(0.85, 1.02));
  const float theta = static_cast<float>(rng.uniform(-0.09, 0.09));
  const float thick = static_cast<float>(rng.uniform(1.7, 2.4));
  const float ct = std::cos(theta), st = std::sin(theta);

  std::vector<Seg> segs;
  segs.reserve(glyph.segs.size());
  for (const auto& s : glyph.segs) {
    auto tx = [&](float x, float y) { return cx + scale * (ct * x - st * y); };
    auto ty = [&](float x, float y) { return cy + scale * (st * x + ct * y); };
    segs.push_back({tx(s.x0, s.y0), ty(s.x0, s.y0), tx(s.x1, s.y1), ty(s.x1, s.y1)});
  }

  ImageTensor mask(hw, hw, 1);
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      const float px = x + 0.5f, py = y + 0.5f;
      float d = 1e9f;
      for (const auto& s : segs) d = std::min(d, point_segment_dist(px, py, s));
      if (glyph.circle_radius > 0) {
        const float rx = px - cx, ry = py - cy;
        d = std::min(d, std::abs(std::sqrt(rx * rx + ry * ry) - glyph.circle_radius * scale));
      }
      mask.at(y, x, 0) = std::clamp(thick - d + 0.5f, 0.f, 1.f);
    }
  }
  return mask;
}

inline std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float c = v * s;
  const float hp = h * 6.f;
  const float x = c * (1.f - std::abs(std::fmod(hp, 2.f) - 1.f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const float m = v - c;
  return {r + m, g + m, b + m};
}

inline ImageTensor render_styled(const ImageTensor& mask, const StyleSpec& base_style,
                                 Rng& pixel_rng) {
  StyleSpec style = base_style;  // per-image draw from the domain's style distribution
  style.bg_hue += static_cast<float>(pixel_rng.uniform(-base_style.hue_jitter,
                                                       base_style.hue_jitter));
  style.bg_value = std::clamp(
      style.bg_value + static_cast<float>(pixel_rng.uniform(-base_style.value_jitter,
                                                            base_style.value_jitter)),
      0.05f, 0.95f);
  for (auto& c : style.stroke_color)
    c = std::clamp(c + static_cast<float>(pixel_rng.uniform(-base_style.stroke_jitter,
                                                            base_style.stroke_jitter)),
                   0.f, 1.f);
  const int hw = mask.height;
  const auto base = hsv_to_rgb(style.bg_hue, 0.55f, style.bg_value);
  const auto alt = hsv_to_rgb(style.bg_hue + 0.07f, 0.55f,
                              std::clamp(style.bg_value + style.bg_contrast, 0.f, 1.f));
  const int period = std::max(1, style.pattern_period);
  ImageTensor img(hw, hw, 3);
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      bool use_alt = false;
      float blend = -1.f;
      switch (style.pattern_id) {
        case 1: use_alt = (y / period) % 2 == 1; break;
        case 2: use_alt = (x / period) % 2 == 1; break;
        case 3: use_alt = ((x / period) + (y / period)) % 2 == 1; break;
        case 4: use_alt = (((x + y) / period) % 2) == 1; break;
        case 5: blend = static_cast<float>(y) / (hw - 1); break;
        default: break;
      }
      const float a = mask.at(y, x, 0);
      for (int c = 0; c < 3; ++c) {
        float bg = blend >= 0 ? base[c] * (1 - blend) + alt[c] * blend
                              : (use_alt ? alt[c] : base[c]);
        float v = bg * (1 - a) + style.stroke_color[c] * a;
        v += static_cast<float>(pixel_rng.uniform(-style.noise_level, style.noise_level));
        img.at(y, x, c) = std::clamp(v, 0.f, 1.f);
      }
    }
  }
  return img;
}

}  // namespace synth

// Test-split instances live in a disjoint id range from training instances.
inline constexpr uint64_t kTestInstanceBase = 1u << 20;

// Renders one synthetic domain. For the target domain, `extra_raw_unknown`
// lists raw glyph ids present only in the target; their hidden label is the
// collapsed unknown index. Target train data carries no `labels`.
inline DomainDataset generate_synthetic_domain(const GmdaTask& task, int domain_index,
                                               const StyleSpec& style, int n_per_class,
                                               uint64_t seed, Split split = Split::kTrain,
                                               const std::vector<int>& extra_raw_unknown = {},
                                               int image_hw = 32) {
  if (domain_index < 0 || domain_index >= task.num_domains())
    throw DataError("domain index " + std::to_string(domain_index) + " not in task");
  if (n_per_class <= 0) throw DataError("n_per_class must be positive");

  const bool is_target = domain_index == task.target_index();
  std::vector<std::pair<int, int>> render_list;  // (raw id, hidden label)
  if (is_target) {
    for (int c = 0; c < task.num_known_classes(); ++c)
      render_list.emplace_back(task.to_raw(c), c);
    if (task.target_has_unknown())
      for (int raw : extra_raw_unknown) render_list.emplace_back(raw, task.unknown_index());
  } else {
    for (int c : task.source_classes(domain_index)) render_list.emplace_back(task.to_raw(c), c);
  }

  DomainDataset ds;
  ds.domain_index = domain_index;
  ds.split = split;
  ds.height = ds.width = image_hw;
  ds.channels = 3;
  std::vector<int> labels, hidden, raw_ids;
  const uint64_t base = split == Split::kTrain ? 0 : kTestInstanceBase;
  for (const auto& [raw, hidden_label] : render_list) {
    for (int i = 0; i < n_per_class; ++i) {
      const uint64_t instance = base + static_cast<uint64_t>(i);
      auto mask = synth::glyph_mask(raw, instance, seed, image_hw);
      Rng pixel_rng = Rng::derive(seed, Stream::kStyle,
                                  (static_cast<uint64_t>(domain_index) << 32) |
                                      static_cast<uint64_t>(raw),
                                  instance);
      ds.images.push_back(synth::render_styled(mask, style, pixel_rng));
      labels.push_back(hidden_label);
      hidden.push_back(hidden_label);
      raw_ids.push_back(raw);
    }
  }
  ds.raw_labels = std::move(raw_ids);
  ds.hidden_labels = std::move(hidden);
  if (!is_target) ds.labels = std::move(labels);
  return ds;
}

// ------------------------------------------------------------------
// Exemplar pool: one fixed training image per populated (source, class).
// ------------------------------------------------------------------

struct ExemplarPool {
  std::map<std::pair<int, int>, ImageTensor> exemplars;

  const ImageTensor* find(int domain, int cls) const {
    auto it = exemplars.find({domain, cls});
    return it == exemplars.end() ? nullptr : &it->second;
  }

  std::vector<int> owners_of(int cls) const {
    std::vector<int> owners;
    for (const auto& [key, img] : exemplars)
      if (key.second == cls) owners.push_back(key.first);
    return owners;
  }
};

inline ExemplarPool build_exemplar_pool(const std::vector<const DomainDataset*>& sources,
                                        const GmdaTask& task, uint64_t seed) {
  ExemplarPool pool;
  for (const DomainDataset* ds : sources) {
    const int d = ds->domain_index;
    if (d >= task.num_sources())
      throw DataError("exemplar pool only takes source domains");
    if (!ds->labels) throw DataError("source dataset without labels");
    for (int cls : task.source_classes(d)) {
      std::vector<int> candidates;
      for (int i = 0; i < ds->size(); ++i)
        if ((*ds->labels)[i] == cls) candidates.push_back(i);
      if (candidates.empty())
        throw DataError("domain " + std::to_string(d) + " owns class " + std::to_string(cls) +
                        " but has no samples of it");
      Rng rng = Rng::derive(seed, Stream::kPool, static_cast<uint64_t>(d),
                            static_cast<uint64_t>(cls));
      const int pick = candidates[rng.uniform_int(candidates.size())];
      pool.exemplars.emplace(std::make_pair(d, cls), ds->images[pick]);
    }
  }
  return pool;
}

// Resolves the exemplar for (fake_domain, cls). On a miss the fake domain is
// re-drawn uniformly among owners of the class, excluding the sample's true
// domain when possible; absent when nobody else owns the class.
struct ExemplarRef {
  const ImageTensor* image;
  int resolved_domain;
};

inline std::optional<ExemplarRef> lookup_exemplar(const ExemplarPool& pool, int fake_domain,
                                                  int cls, int true_domain, Rng& rng) {
  if (const ImageTensor* img = pool.find(fake_domain, cls)) return ExemplarRef{img, fake_domain};
  std::vector<int> owners = pool.owners_of(cls);
  std::erase(owners, true_domain);
  if (owners.empty()) return std::nullopt;
  const int resolved = owners[rng.uniform_int(owners.size())];
  return ExemplarRef{pool.find(resolved, cls), resolved};
}

// ------------------------------------------------------------------
// Batch composition: one same-size sub-batch per domain per step, sampled
// without replacement inside an epoch; per-domain permutations are derived
// from (seed, domain, epoch), so any epoch is reconstructable on its own.
// ------------------------------------------------------------------

struct TrainBatch {
  std::vector<std::vector<int>> indices;  // per domain, batch_size each
};

class BatchStream {
 public:
  BatchStream(std::vector<const DomainDataset*> datasets, int batch_size, uint64_t seed)
      : datasets_(std::move(datasets)), batch_size_(batch_size), seed_(seed) {
    if (datasets_.empty()) throw DataError("no datasets");
    int min_size = datasets_[0]->size();
    for (const auto* d : datasets_) min_size = std::min(min_size, d->size());
    if (batch_size_ <= 0 || batch_size_ > min_size)
      throw DataError("batch size " + std::to_string(batch_size_) +
                      " larger than the smallest domain (" + std::to_string(min_size) + ")");
    steps_per_epoch_ = min_size / batch_size_;
  }

  int steps_per_epoch() const { return steps_per_epoch_; }
  int num_domains() const { return static_cast<int>(datasets_.size()); }

  std::vector<int> epoch_permutation(int domain, int epoch) const {
    const int n = datasets_[domain]->size();
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    Rng rng = Rng::derive(seed_, Stream::kShuffle, static_cast<uint64_t>(domain),
                          static_cast<uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_int(static_cast<uint64_t>(i) + 1)]);
    return perm;
  }

  TrainBatch batch(int epoch, int step) const {
    if (step < 0 || step >= steps_per_epoch_) throw DataError("step out of range");
    if (epoch != cached_epoch_) {
      cached_perms_.clear();
      for (int d = 0; d < num_domains(); ++d) cached_perms_.push_back(epoch_permutation(d, epoch));
      cached_epoch_ = epoch;
    }
    TrainBatch b;
    b.indices.resize(num_domains());
    for (int d = 0; d < num_domains(); ++d) {
      b.indices[d].assign(cached_perms_[d].begin() + static_cast<long>(step) * batch_size_,
                          cached_perms_[d].begin() + static_cast<long>(step + 1) * batch_size_);
    }
    return b;
  }

 private:
  std::vector<const DomainDataset*> datasets_;
  int batch_size_;
  uint64_t seed_;
  int steps_per_epoch_;
  mutable int cached_epoch_ = -1;
  mutable std::vector<std::vector<int>> cached_perms_;
};

}  // namespace vdd

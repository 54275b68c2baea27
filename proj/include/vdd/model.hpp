#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "vdd/core/adam.hpp"
#include "vdd/core/nn.hpp"
#include "vdd/errors.hpp"

namespace vdd {

struct ModelConfig {
  int image_hw = 32;
  int latent_d = 30;    // domain-branch width
  int latent_s = 2048;  // sample-branch width
  int embed_dim = 512;
  std::array<int, 3> enc_channels{64, 128, 256};
  int res_blocks_per_stage = 2;
  int classifier_hidden = 512;  // width of the classifier's hidden layer
  float dropout = 0.7f;
  float logstd_min = -6.f;
  float logstd_max = 4.f;

  // "digits" mirrors the reference setup; "cifar" widens the domain branch;
  // "small" is a reduced preset for desk-scale experiments and smoke runs.
  static ModelConfig preset(const std::string& name) {
    ModelConfig c;
    if (name == "digits") {
      // defaults above
    } else if (name == "cifar") {
      c.latent_d = 100;
    } else if (name == "small") {
      c.latent_d = 16;
      c.latent_s = 256;
      c.embed_dim = 64;
      c.enc_channels = {16, 32, 64};
      c.res_blocks_per_stage = 1;
      c.classifier_hidden = 128;
    } else {
      throw ConfigError("unknown model preset '" + name + "'");
    }
    return c;
  }
};

// One encoder branch's output: posterior parameters plus the
// reparameterized sample (value == mean in eval mode).
template <typename T>
struct GaussianLatent {
  Var<T> mean, log_std, value;

  int64_t rows() const { return mean.val().dim(0); }
  int64_t width() const { return mean.val().dim(1); }

  GaussianLatent gather(const std::vector<int64_t>& idx) const {
    return {ops::gather_rows(mean, idx), ops::gather_rows(log_std, idx),
            ops::gather_rows(value, idx)};
  }
};

// Dual-branch VAE: a domain encoder over domain indices, a convolutional
// sample encoder, a shared decoder over [z_s; z_d], and a classification
// head over z_s alone.
template <typename T>
class VddModel {
 public:
  static constexpr double kLogStdInit = -2.0;

  VddModel(ModelConfig cfg, int num_domains, int num_known_classes, uint64_t seed)
      : cfg_(cfg), num_domains_(num_domains), num_classes_(num_known_classes + 1) {
    Rng rng = Rng::derive(seed, Stream::kInit);
    const auto [c0, c1, c2] = cfg_.enc_channels;
    const int hw = cfg_.image_hw;
    feat_hw_ = hw / 8;  // three stride-2 convolutions
    feat_dim_ = c2 * feat_hw_ * feat_hw_;

    domain_embed_ = nn::Embedding<T>(params_, "domain_encoder.embed", num_domains_,
                                     cfg_.embed_dim, rng);
    domain_head_ = nn::Linear<T>(params_, "domain_encoder.head", cfg_.embed_dim,
                                 2 * cfg_.latent_d, rng, T(0.05));
    // Posteriors start tight (sigma ~ exp(-2)): a noise-dominated z_s at init
    // starves both the decoder and the classifier of signal, and the KL pulls
    // sigma back toward 1 as training settles.
    for (int64_t j = cfg_.latent_d; j < 2 * cfg_.latent_d; ++j)
      domain_head_.bias.val()[j] = T(kLogStdInit);

    enc_conv1_ = nn::Conv2d<T>(params_, "sample_encoder.conv1", 3, c0, 4, 2, 1, rng);
    enc_bn1_ = nn::BatchNorm2d<T>(params_, "sample_encoder.bn1", c0);
    enc_conv2_ = nn::Conv2d<T>(params_, "sample_encoder.conv2", c0, c1, 4, 2, 1, rng);
    enc_bn2_ = nn::BatchNorm2d<T>(params_, "sample_encoder.bn2", c1);
    enc_conv3_ = nn::Conv2d<T>(params_, "sample_encoder.conv3", c1, c2, 4, 2, 1, rng);
    enc_bn3_ = nn::BatchNorm2d<T>(params_, "sample_encoder.bn3", c2);
    enc_mean_ = nn::Linear<T>(params_, "sample_encoder.fc_mean", feat_dim_, cfg_.latent_s, rng);
    enc_logstd_ = nn::Linear<T>(params_, "sample_encoder.fc_logstd", feat_dim_, cfg_.latent_s,
                                rng, T(0.01));
    enc_logstd_.bias.val().fill(T(kLogStdInit));

    dec_fc_ = nn::Linear<T>(params_, "decoder.fc", cfg_.latent_s + cfg_.latent_d, feat_dim_, rng);
    dec_conv_in_ = nn::Conv2d<T>(params_, "decoder.conv_in", c2, c2, 3, 1, 1, rng);
    for (int b = 0; b < cfg_.res_blocks_per_stage; ++b) {
      dec_stage1_.emplace_back(params_, "decoder.stage1.block" + std::to_string(b),
                               b == 0 ? c2 : c1, c1, rng);
      dec_stage2_.emplace_back(params_, "decoder.stage2.block" + std::to_string(b),
                               b == 0 ? c1 : c0, c0, rng);
    }
    dec_conv_out_ = nn::Conv2d<T>(params_, "decoder.conv_out", c0, 3, 3, 1, 1, rng);

    cls_hidden_ = nn::Linear<T>(params_, "classifier.hidden", cfg_.latent_s,
                                cfg_.classifier_hidden, rng);
    classifier_ = nn::Linear<T>(params_, "classifier.head", cfg_.classifier_hidden,
                                num_classes_, rng, T(0.01));
  }

  const ModelConfig& config() const { return cfg_; }
  int num_domains() const { return num_domains_; }
  int num_classes() const { return num_classes_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // E_d: embedding row -> linear head -> (mu, log sigma) -> reparameterize.
  GaussianLatent<T> encode_domain(const std::vector<int>& domain_indices, Rng* noise_rng,
                                  bool training) {
    for (int d : domain_indices)
      if (d < 0 || d >= num_domains_)
        throw TrainingError("domain index " + std::to_string(d) + " out of range");
    auto emb = domain_embed_.forward(domain_indices);
    auto head = domain_head_.forward(emb);
    return split_latent(head, cfg_.latent_d, noise_rng, training);
  }

  // E_s: 3x (stride-2 conv, batch-norm, LeakyReLU), then one linear each for
  // mean and log sigma.
  GaussianLatent<T> encode_sample(const Var<T>& images, Rng* noise_rng, bool training) {
    check_image_shape(images);
    auto h = ops::leaky_relu(enc_bn1_.forward(enc_conv1_.forward(images), training), T(0.2));
    h = ops::leaky_relu(enc_bn2_.forward(enc_conv2_.forward(h), training), T(0.2));
    h = ops::leaky_relu(enc_bn3_.forward(enc_conv3_.forward(h), training), T(0.2));
    auto flat = reshape(h, {images.val().dim(0), feat_dim_});
    auto mean = enc_mean_.forward(flat);
    auto log_std = ops::clamp(enc_logstd_.forward(flat), T(cfg_.logstd_min), T(cfg_.logstd_max));
    return reparameterize(mean, log_std, noise_rng, training);
  }

  // G([z_s; z_d]) -> image in [0,1].
  Var<T> decode(const Var<T>& z_s, const Var<T>& z_d, bool training) {
    if (z_s.val().dim(1) != cfg_.latent_s || z_d.val().dim(1) != cfg_.latent_d)
      throw TrainingError("decoder latent width mismatch");
    if (z_s.val().dim(0) != z_d.val().dim(0))
      throw TrainingError("decoder latent batch mismatch");
    const auto [c0, c1, c2] = cfg_.enc_channels;
    const int64_t b = z_s.val().dim(0);
    auto z = ops::concat_cols(z_s, z_d);
    auto h = reshape(dec_fc_.forward(z), {b, feat_hw_, feat_hw_, c2});
    h = ops::relu(dec_conv_in_.forward(h));
    h = ops::upsample_nearest2(h);
    for (auto& blk : dec_stage1_) h = blk.forward(h, training);
    h = ops::upsample_nearest2(h);
    for (auto& blk : dec_stage2_) h = blk.forward(h, training);
    h = ops::upsample_nearest2(h);
    return ops::sigmoid(dec_conv_out_.forward(h));
  }

  // h(z_s): small nonlinear head with dropout, then log-softmax over C+1.
  Var<T> classify_logp(const Var<T>& z_s, Rng* dropout_rng, bool training) {
    if (z_s.val().dim(1) != cfg_.latent_s) throw TrainingError("classifier width mismatch");
    auto h = ops::leaky_relu(cls_hidden_.forward(z_s), T(0.2));
    if (training && dropout_rng)
      h = ops::dropout(h, T(cfg_.dropout), *dropout_rng, true);
    return ops::log_softmax(classifier_.forward(h));
  }

  Var<T> classify(const Var<T>& z_s, Rng* dropout_rng, bool training) {
    return ops::exp(classify_logp(z_s, dropout_rng, training));
  }

  // Checkpoint surface: parameters and batch-norm buffers by stable name.
  void export_state(std::map<std::string, Tensor<T>>& out) const {
    for (const auto& [name, p] : params_.params()) out["param/" + name] = p.val();
    for (const auto& [name, buf] : params_.buffers()) out["buffer/" + name] = *buf;
  }

  void import_state(const std::map<std::string, Tensor<T>>& in) {
    for (auto& [name, p] : params_.params()) {
      const auto& src = in.at("param/" + name);
      if (!src.same_shape(p.val())) throw TrainingError("checkpoint shape mismatch at " + name);
      Var<T> handle = p;
      handle.val() = src;
    }
    for (auto& [name, buf] : params_.buffers()) *buf = in.at("buffer/" + name);
  }

 private:
  static Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape) {
    Tensor<T> v = x.val().reshaped(std::move(shape));
    return make_op<T>(std::move(v), {x},
                      [](Node<T>& self) { detail::accumulate(self.parents[0], self.grad); });
  }

  GaussianLatent<T> split_latent(const Var<T>& head, int64_t width, Rng* noise_rng,
                                 bool training) {
    auto mean = ops::slice_cols(head, 0, width);
    auto log_std =
        ops::clamp(ops::slice_cols(head, width, width), T(cfg_.logstd_min), T(cfg_.logstd_max));
    return reparameterize(mean, log_std, noise_rng, training);
  }

  GaussianLatent<T> reparameterize(const Var<T>& mean, const Var<T>& log_std, Rng* noise_rng,
                                   bool training) {
    GaussianLatent<T> lat;
    lat.mean = mean;
    lat.log_std = log_std;
    if (training && noise_rng) {
      Tensor<T> eps(mean.val().shape());
      noise_rng->fill_normal(eps);
      lat.value = ops::add(mean, ops::mul(ops::exp(log_std), Var<T>::constant(std::move(eps))));
    } else {
      lat.value = mean;
    }
    return lat;
  }

  void check_image_shape(const Var<T>& images) const {
    const auto& s = images.val().shape();
    if (s.size() != 4 || s[1] != cfg_.image_hw || s[2] != cfg_.image_hw || s[3] != 3)
      throw TrainingError("expected [B, " + std::to_string(cfg_.image_hw) + ", " +
                          std::to_string(cfg_.image_hw) + ", 3] images");
  }

  ModelConfig cfg_;
  int num_domains_;
  int num_classes_;
  int64_t feat_hw_ = 4;
  int64_t feat_dim_ = 0;

  ParamStore<T> params_;
  nn::Embedding<T> domain_embed_;
  nn::Linear<T> domain_head_;
  nn::Conv2d<T> enc_conv1_, enc_conv2_, enc_conv3_;
  nn::BatchNorm2d<T> enc_bn1_, enc_bn2_, enc_bn3_;
  nn::Linear<T> enc_mean_, enc_logstd_;
  nn::Linear<T> dec_fc_;
  nn::Conv2d<T> dec_conv_in_, dec_conv_out_;
  std::vector<nn::ResidualBlock<T>> dec_stage1_, dec_stage2_;
  nn::Linear<T> cls_hidden_;
  nn::Linear<T> classifier_;
};

}  // namespace vdd

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vdd/core/autodiff.hpp"
#include "vdd/core/conv.hpp"
#include "vdd/core/ops.hpp"
#include "vdd/core/rng.hpp"

namespace vdd {

// Owns all trainable parameters and persistent buffers (batch-norm running
// statistics) of a model, keyed by stable names for checkpointing. Insertion
// order is the optimizer slot order.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    auto v = Var<T>::param(std::move(init));
    params_.emplace_back(name, v);
    return v;
  }

  void register_buffer(const std::string& name, std::shared_ptr<Tensor<T>> buf) {
    buffers_.emplace_back(name, std::move(buf));
  }

  const std::vector<std::pair<std::string, Var<T>>>& params() const { return params_; }
  const std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>>& buffers() const {
    return buffers_;
  }

  void zero_grad() {
    for (auto& [name, p] : params_)
      if (p.grad().numel() > 0) p.grad().fill(T(0));
  }

  int64_t num_scalars() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.val().numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor<T>>>> buffers_;
};

namespace nn {

// Kaiming-normal fan-in init, the usual choice ahead of (leaky) ReLU.
template <typename T>
Tensor<T> kaiming_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  rng.fill_normal(t, static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in))));
  return t;
}

template <typename T>
struct Linear {
  Var<T> weight, bias;
  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
         std::optional<T> weight_std = std::nullopt) {
    Tensor<T> w({in, out});
    rng.fill_normal(w, weight_std ? *weight_std
                                  : static_cast<T>(std::sqrt(2.0 / static_cast<double>(in))));
    weight = ps.add(name + ".weight", std::move(w));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }
  Var<T> forward(const Var<T>& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }
};

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  int64_t k = 3, stride = 1, pad = 1;
  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, int64_t k_,
         int64_t stride_, int64_t pad_, Rng& rng)
      : k(k_), stride(stride_), pad(pad_) {
    weight = ps.add(name + ".weight", kaiming_normal<T>({k * k * cin, cout}, k * k * cin, rng));
    bias = ps.add(name + ".bias", Tensor<T>({cout}));
  }
  Var<T> forward(const Var<T>& x) const { return ops::conv2d(x, weight, bias, k, stride, pad); }
};

// Running statistics live on the heap behind shared_ptrs so the layer can be
// moved (vector growth, assignment) without invalidating the buffer registry.
template <typename T>
struct BatchNorm2d {
  Var<T> gamma, beta;
  std::shared_ptr<ops::BatchNormState<T>> state;
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& ps, const std::string& name, int64_t c)
      : state(std::make_shared<ops::BatchNormState<T>>()) {
    gamma = ps.add(name + ".gamma", Tensor<T>({c}, T(1)));
    beta = ps.add(name + ".beta", Tensor<T>({c}));
    state->running_mean = std::make_shared<Tensor<T>>(std::vector<int64_t>{c});
    state->running_var = std::make_shared<Tensor<T>>(std::vector<int64_t>{c}, T(1));
    ps.register_buffer(name + ".running_mean", state->running_mean);
    ps.register_buffer(name + ".running_var", state->running_var);
  }
  Var<T> forward(const Var<T>& x, bool training) {
    return ops::batchnorm(x, gamma, beta, *state, training);
  }
};

template <typename T>
struct Embedding {
  Var<T> table;
  Embedding() = default;
  Embedding(ParamStore<T>& ps, const std::string& name, int64_t rows, int64_t dim, Rng& rng) {
    Tensor<T> t({rows, dim});
    rng.fill_normal(t, T(1));
    table = ps.add(name + ".table", std::move(t));
  }
  Var<T> forward(std::vector<int> idx) const { return ops::embedding(table, std::move(idx)); }
};

// Basic two-conv residual block with a 1x1 projection when widths change.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
  std::optional<Conv2d<T>> proj;
  ResidualBlock() = default;
  ResidualBlock(ParamStore<T>& ps, const std::string& name, int64_t cin, int64_t cout, Rng& rng)
      : conv1(ps, name + ".conv1", cin, cout, 3, 1, 1, rng),
        conv2(ps, name + ".conv2", cout, cout, 3, 1, 1, rng),
        bn1(ps, name + ".bn1", cout),
        bn2(ps, name + ".bn2", cout) {
    if (cin != cout) proj.emplace(ps, name + ".proj", cin, cout, 1, 1, 0, rng);
  }
  Var<T> forward(const Var<T>& x, bool training) {
    auto h = ops::relu(bn1.forward(conv1.forward(x), training));
    h = bn2.forward(conv2.forward(h), training);
    auto skip = proj ? proj->forward(x) : x;
    return ops::relu(ops::add(h, skip));
  }
};

}  // namespace nn
}  // namespace vdd

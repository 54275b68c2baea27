#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vdd/core/nn.hpp"
#include "vdd/core/tensor.hpp"

namespace vdd {

// Adam with decoupled weight decay (the decay is applied directly to the
// parameter, not mixed into the moment estimates).
template <typename T>
class AdamW {
 public:
  explicit AdamW(const ParamStore<T>& store, T beta1 = T(0.9), T beta2 = T(0.999),
                 T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.reserve(store.params().size());
    for (const auto& [name, p] : store.params())
      slots_.push_back({Tensor<T>(p.val().shape()), Tensor<T>(p.val().shape())});
  }

  void step(ParamStore<T>& store, T lr, T weight_decay) {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t i = 0; i < slots_.size(); ++i) {
      Var<T> p = store.params()[i].second;
      if (p.grad().numel() == 0) continue;
      T* w = p.val().data();
      const T* g = p.grad().data();
      T* m = slots_[i].m.data();
      T* v = slots_[i].v.data();
      for (int64_t j = 0; j < p.val().numel(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        w[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * w[j]);
      }
    }
  }

  int64_t steps() const { return t_; }

  // Checkpoint surface: moment tensors plus the step counter.
  void export_state(const ParamStore<T>& store,
                    std::map<std::string, Tensor<T>>& out) const {
    for (size_t i = 0; i < slots_.size(); ++i) {
      out["adam_m/" + store.params()[i].first] = slots_[i].m;
      out["adam_v/" + store.params()[i].first] = slots_[i].v;
    }
    out["meta/adam_t"] = Tensor<T>::scalar(static_cast<T>(t_));
  }

  void import_state(const ParamStore<T>& store,
                    const std::map<std::string, Tensor<T>>& in) {
    for (size_t i = 0; i < slots_.size(); ++i) {
      slots_[i].m = in.at("adam_m/" + store.params()[i].first);
      slots_[i].v = in.at("adam_v/" + store.params()[i].first);
    }
    t_ = static_cast<int64_t>(in.at("meta/adam_t")[0]);
  }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  std::vector<Slot> slots_;
  T beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace vdd

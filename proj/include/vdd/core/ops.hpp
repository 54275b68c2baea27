#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "vdd/core/autodiff.hpp"
#include "vdd/core/blas.hpp"
#include "vdd/core/rng.hpp"
#include "vdd/core/tensor.hpp"

// Differentiable primitives. Every op builds its forward value eagerly and
// registers a closure that scatters d(out) into d(parents). Gradient
// correctness for each op is covered by the finite-difference suite.
namespace vdd::ops {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  assert(a.val().same_shape(b.val()));
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  const T* pb = b.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    vdd::detail::accumulate(self.parents[0], self.grad);
    vdd::detail::accumulate(self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  assert(a.val().same_shape(b.val()));
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  const T* pb = b.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    vdd::detail::accumulate(self.parents[0], self.grad);
    auto& p = self.parents[1];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) dst[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  assert(a.val().same_shape(b.val()));
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  const T* pb = b.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const T* g = self.grad.data();
    auto& pa = self.parents[0];
    auto& pb2 = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      T* da = pa->grad.data();
      const T* vb = pb2->value.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) da[i] += g[i] * vb[i];
    }
    if (pb2->requires_grad) {
      pb2->ensure_grad();
      T* db = pb2->grad.data();
      const T* va = pa->value.data();
      for (int64_t i = 0; i < self.grad.numel(); ++i) db[i] += g[i] * va[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * c;
  return make_op<T>(std::move(out), {a}, [c](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += c * g[i];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + c;
  return make_op<T>(std::move(out), {a},
                    [](Node<T>& self) { vdd::detail::accumulate(self.parents[0], self.grad); });
}

// Broadcasts b over the last dimension: x viewed as [M, N] with N = b.numel().
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  const int64_t n = b.val().numel();
  const int64_t m = x.val().numel() / n;
  Tensor<T> out = Tensor<T>::uninit(x.val().shape());
  T* po = out.data();
  const T* px = x.val().data();
  const T* pb = b.val().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
  return make_op<T>(std::move(out), {x, b}, [m, n](Node<T>& self) {
    vdd::detail::accumulate(self.parents[0], self.grad);
    auto& pb2 = self.parents[1];
    if (!pb2->requires_grad) return;
    pb2->ensure_grad();
    T* db = pb2->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) db[j] += g[i * n + j];
  });
}

// out[m, n] = a[m, k] * b[k, n]; shapes are taken from the logical dims.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const int64_t m = a.val().dim(0);
  const int64_t k = a.val().dim(1);
  const int64_t n = b.val().dim(1);
  assert(b.val().dim(0) == k);
  Tensor<T> out = Tensor<T>::uninit({m, n});
  blas::gemm(false, false, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), T(1),
             a.val().data(), static_cast<int>(k), b.val().data(), static_cast<int>(n), T(0),
             out.data(), static_cast<int>(n));
  return make_op<T>(std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    const T* g = self.grad.data();
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      blas::gemm(false, true, static_cast<int>(m), static_cast<int>(k), static_cast<int>(n), T(1),
                 g, static_cast<int>(n), pb->value.data(), static_cast<int>(n), T(1),
                 pa->grad.data(), static_cast<int>(k));
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      blas::gemm(true, false, static_cast<int>(k), static_cast<int>(n), static_cast<int>(m), T(1),
                 pa->value.data(), static_cast<int>(k), g, static_cast<int>(n), T(1),
                 pb->grad.data(), static_cast<int>(n));
    }
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::exp(pa[i]);
  auto self_val = out;  // captured copy; exp'(x) = exp(x)
  return make_op<T>(std::move(out), {a}, [self_val](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    const T* v = self_val.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += g[i] * v[i];
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pa[i];
  return make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    const T* x = p->value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += T(2) * x[i] * g[i];
  });
}

// Zero gradient outside [lo, hi], like a hard clamp.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::clamp(pa[i], lo, hi);
  return make_op<T>(std::move(out), {a}, [lo, hi](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    const T* x = p->value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      if (x[i] > lo && x[i] < hi) dst[i] += g[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = T(1) / (T(1) + std::exp(-pa[i]));
  auto s = out;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    const T* v = s.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += g[i] * v[i] * (T(1) - v[i]);
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out = Tensor<T>::uninit(a.val().shape());
  const T* pa = a.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] < T(0) ? pa[i] * slope : pa[i];
  return make_op<T>(std::move(out), {a}, [slope](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    const T* x = p->value.data();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      dst[i] += x[i] > T(0) ? g[i] : slope * g[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return leaky_relu(a, T(0));
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  const int64_t m = a.val().dim(0);
  const int64_t na = a.val().dim(1);
  const int64_t nb = b.val().dim(1);
  assert(b.val().dim(0) == m);
  Tensor<T> out = Tensor<T>::uninit({m, na + nb});
  for (int64_t i = 0; i < m; ++i) {
    std::copy_n(a.val().data() + i * na, na, out.data() + i * (na + nb));
    std::copy_n(b.val().data() + i * nb, nb, out.data() + i * (na + nb) + na);
  }
  return make_op<T>(std::move(out), {a, b}, [m, na, nb](Node<T>& self) {
    const T* g = self.grad.data();
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      T* da = pa->grad.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < na; ++j) da[i * na + j] += g[i * (na + nb) + j];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      T* db = pb->grad.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < nb; ++j) db[i * nb + j] += g[i * (na + nb) + na + j];
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int64_t start, int64_t len) {
  const int64_t m = x.val().dim(0);
  const int64_t n = x.val().dim(1);
  Tensor<T> out = Tensor<T>::uninit({m, len});
  for (int64_t i = 0; i < m; ++i)
    std::copy_n(x.val().data() + i * n + start, len, out.data() + i * len);
  return make_op<T>(std::move(out), {x}, [m, n, start, len](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < len; ++j) dst[i * n + start + j] += g[i * len + j];
  });
}

// Row gather: out[i, :] = x[idx[i], :]. Rows are x's leading dimension; any
// trailing dims are flattened.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int64_t> idx) {
  const int64_t rows = x.val().dim(0);
  const int64_t cols = x.val().numel() / rows;
  std::vector<int64_t> shape = x.val().shape();
  shape[0] = static_cast<int64_t>(idx.size());
  Tensor<T> out = Tensor<T>::uninit(shape);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.val().data() + idx[i] * cols, cols, out.data() + static_cast<int64_t>(i) * cols);
  return make_op<T>(std::move(out), {x}, [idx = std::move(idx), cols](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    for (size_t i = 0; i < idx.size(); ++i) {
      const T* gi = g + static_cast<int64_t>(i) * cols;
      T* di = dst + idx[i] * cols;
      for (int64_t j = 0; j < cols; ++j) di[j] += gi[j];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape) {
  Tensor<T> v = x.val().reshaped(std::move(shape));
  return make_op<T>(std::move(v), {x},
                    [](Node<T>& self) { vdd::detail::accumulate(self.parents[0], self.grad); });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T acc = T(0);
  const T* pa = a.val().data();
  for (int64_t i = 0; i < a.val().numel(); ++i) acc += pa[i];
  return make_op<T>(Tensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const T g = self.grad[0];
    T* dst = p->grad.data();
    for (int64_t i = 0; i < p->grad.numel(); ++i) dst[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.val().numel()));
}

// Sum over the last dimension of size k: [R, k] -> [R].
template <typename T>
Var<T> sum_last(const Var<T>& a, int64_t k) {
  const int64_t rows = a.val().numel() / k;
  std::vector<int64_t> shape(a.val().shape().begin(), a.val().shape().end() - 1);
  if (shape.empty()) shape = {1};
  Tensor<T> out = Tensor<T>::uninit(shape);
  const T* pa = a.val().data();
  for (int64_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (int64_t j = 0; j < k; ++j) acc += pa[r * k + j];
    out[r] = acc;
  }
  return make_op<T>(std::move(out), {a}, [rows, k](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < k; ++j) dst[r * k + j] += g[r];
  });
}

// logsumexp over the middle axis of [A, B, C] -> [A, C], max-stabilized.
template <typename T>
Var<T> logsumexp_mid(const Var<T>& x, int64_t a, int64_t b, int64_t c) {
  Tensor<T> out = Tensor<T>::uninit({a, c});
  const T* px = x.val().data();
  for (int64_t i = 0; i < a; ++i) {
    for (int64_t k = 0; k < c; ++k) {
      T mx = px[i * b * c + k];
      for (int64_t j = 1; j < b; ++j) mx = std::max(mx, px[(i * b + j) * c + k]);
      T acc = T(0);
      for (int64_t j = 0; j < b; ++j) acc += std::exp(px[(i * b + j) * c + k] - mx);
      out[i * c + k] = mx + std::log(acc);
    }
  }
  auto lse = out;
  return make_op<T>(std::move(out), {x}, [lse, a, b, c](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    const T* px = p->value.data();
    const T* pl = lse.data();
    for (int64_t i = 0; i < a; ++i)
      for (int64_t j = 0; j < b; ++j)
        for (int64_t k = 0; k < c; ++k) {
          const int64_t xi = (i * b + j) * c + k;
          dst[xi] += g[i * c + k] * std::exp(px[xi] - pl[i * c + k]);
        }
  });
}

// Diagonal of a square matrix: [M, M] -> [M].
template <typename T>
Var<T> diag(const Var<T>& x, int64_t m) {
  Tensor<T> out = Tensor<T>::uninit({m});
  for (int64_t i = 0; i < m; ++i) out[i] = x.val()[i * m + i];
  return make_op<T>(std::move(out), {x}, [m](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < m; ++i) dst[i * m + i] += g[i];
  });
}

// Pairwise diagonal-Gaussian log densities for the minibatch-weighted
// estimators: out[i, j, k] = log N(z[i,k]; mu[j,k], exp(ls[j,k])).
template <typename T>
Var<T> gauss_logpdf_matrix(const Var<T>& z, const Var<T>& mu, const Var<T>& ls) {
  const int64_t m = z.val().dim(0);
  const int64_t k = z.val().dim(1);
  assert(mu.val().dim(0) == m && mu.val().dim(1) == k);
  const T half_log_2pi = T(0.5) * std::log(T(2) * std::numbers::pi_v<T>);
  Tensor<T> out = Tensor<T>::uninit({m, m, k});
  const T* pz = z.val().data();
  const T* pm = mu.val().data();
  const T* pl = ls.val().data();
  for (int64_t j = 0; j < m; ++j) {
    for (int64_t d = 0; d < k; ++d) {
      const T lsd = pl[j * k + d];
      const T inv_var = std::exp(T(-2) * lsd);
      const T mud = pm[j * k + d];
      for (int64_t i = 0; i < m; ++i) {
        const T diff = pz[i * k + d] - mud;
        out[(i * m + j) * k + d] = -half_log_2pi - lsd - T(0.5) * diff * diff * inv_var;
      }
    }
  }
  return make_op<T>(std::move(out), {z, mu, ls}, [m, k](Node<T>& self) {
    auto& pz2 = self.parents[0];
    auto& pm2 = self.parents[1];
    auto& pl2 = self.parents[2];
    const T* g = self.grad.data();
    const T* zv = pz2->value.data();
    const T* mv = pm2->value.data();
    const T* lv = pl2->value.data();
    if (pz2->requires_grad) pz2->ensure_grad();
    if (pm2->requires_grad) pm2->ensure_grad();
    if (pl2->requires_grad) pl2->ensure_grad();
    for (int64_t j = 0; j < m; ++j) {
      for (int64_t d = 0; d < k; ++d) {
        const T lsd = lv[j * k + d];
        const T inv_var = std::exp(T(-2) * lsd);
        const T mud = mv[j * k + d];
        T dmu = T(0), dls = T(0);
        for (int64_t i = 0; i < m; ++i) {
          const T diff = zv[i * k + d] - mud;
          const T gi = g[(i * m + j) * k + d];
          const T scaled = gi * diff * inv_var;
          if (pz2->requires_grad) pz2->grad[i * k + d] -= scaled;
          dmu += scaled;
          dls += gi * (diff * diff * inv_var - T(1));
        }
        if (pm2->requires_grad) pm2->grad[j * k + d] += dmu;
        if (pl2->requires_grad) pl2->grad[j * k + d] += dls;
      }
    }
  });
}

// Row-wise log-softmax on [M, N].
template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  const int64_t m = x.val().dim(0);
  const int64_t n = x.val().dim(1);
  Tensor<T> out = Tensor<T>::uninit(x.val().shape());
  const T* px = x.val().data();
  T* po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    const T* row = px + i * n;
    T mx = row[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T acc = T(0);
    for (int64_t j = 0; j < n; ++j) acc += std::exp(row[j] - mx);
    const T lse = mx + std::log(acc);
    for (int64_t j = 0; j < n; ++j) po[i * n + j] = row[j] - lse;
  }
  auto logp = out;
  return make_op<T>(std::move(out), {x}, [logp, m, n](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    const T* lp = logp.data();
    for (int64_t i = 0; i < m; ++i) {
      T gsum = T(0);
      for (int64_t j = 0; j < n; ++j) gsum += g[i * n + j];
      for (int64_t j = 0; j < n; ++j)
        dst[i * n + j] += g[i * n + j] - std::exp(lp[i * n + j]) * gsum;
    }
  });
}

// Weighted negative log likelihood: -sum_i w[i] * logp[i, label[i]] / denom.
template <typename T>
Var<T> masked_nll(const Var<T>& logp, std::vector<int> labels, std::vector<T> weights, T denom) {
  const int64_t m = logp.val().dim(0);
  const int64_t n = logp.val().dim(1);
  assert(static_cast<int64_t>(labels.size()) == m);
  T acc = T(0);
  for (int64_t i = 0; i < m; ++i) acc -= weights[i] * logp.val()[i * n + labels[i]];
  acc /= denom;
  return make_op<T>(Tensor<T>::scalar(acc), {logp},
                    [labels = std::move(labels), weights = std::move(weights), denom,
                     n](Node<T>& self) {
                      auto& p = self.parents[0];
                      if (!p->requires_grad) return;
                      p->ensure_grad();
                      const T g = self.grad[0];
                      for (size_t i = 0; i < labels.size(); ++i)
                        p->grad[static_cast<int64_t>(i) * n + labels[i]] -=
                            g * weights[i] / denom;
                    });
}

// Embedding lookup: table[D, E] gathered by per-row indices.
template <typename T>
Var<T> embedding(const Var<T>& table, std::vector<int> idx) {
  const int64_t e = table.val().dim(1);
  Tensor<T> out = Tensor<T>::uninit({static_cast<int64_t>(idx.size()), e});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(table.val().data() + idx[i] * e, e, out.data() + static_cast<int64_t>(i) * e);
  return make_op<T>(std::move(out), {table}, [idx = std::move(idx), e](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const T* g = self.grad.data();
    for (size_t i = 0; i < idx.size(); ++i) {
      T* dst = p->grad.data() + idx[i] * e;
      const T* gi = g + static_cast<int64_t>(i) * e;
      for (int64_t j = 0; j < e; ++j) dst[j] += gi[j];
    }
  });
}

// Inverted dropout with a mask drawn from `rng`; identity when not training.
template <typename T>
Var<T> dropout(const Var<T>& x, T rate, Rng& rng, bool training) {
  if (!training || rate <= T(0)) return x;
  Tensor<T> mask = Tensor<T>::uninit(x.val().shape());
  const T keep = T(1) - rate;
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.uniform() < static_cast<double>(keep) ? T(1) / keep : T(0);
  return mul(x, Var<T>::constant(std::move(mask)));
}

}  // namespace vdd::ops

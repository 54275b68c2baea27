#pragma once

#include <cmath>
#include <string>

#include "vdd/core/ops.hpp"
#include "vdd/errors.hpp"
#include "vdd/model.hpp"

namespace vdd {

// Context for the minibatch-weighted-sampling estimators: N is the total
// number of training samples across all domains of the task; the batch size
// M is taken from the latents themselves.
struct EstimatorContext {
  int64_t dataset_size = 0;
};

// Per-step scalar loss values, in nats, as logged to the metrics CSV.
template <typename T = float>
struct LossBreakdown {
  T recon = 0, kl_sample = 0, mi_domain = 0, tc_domain = 0, dimkl_domain = 0;
  T exemplar = 0, source_ce = 0, target_entropy = 0, pseudo_ce = 0, total = 0;
};

namespace losses {

// Mean over the batch of the per-image summed squared error.
template <typename T>
Var<T> reconstruction_loss(const Var<T>& x, const Var<T>& x_hat) {
  if (!x.val().same_shape(x_hat.val()))
    throw TrainingError("reconstruction shape mismatch");
  const T batch = static_cast<T>(x.val().dim(0));
  return ops::scale(ops::sum_all(ops::square(ops::sub(x_hat, x))), T(1) / batch);
}

// Closed-form KL(q || N(0, I)) for a diagonal Gaussian, batch mean:
// 0.5 * sum_k (mu^2 + sigma^2 - 2 log sigma - 1).
template <typename T>
Var<T> gaussian_kl(const GaussianLatent<T>& lat) {
  const T batch = static_cast<T>(lat.rows());
  auto sigma2 = ops::exp(ops::scale(lat.log_std, T(2)));
  auto inner = ops::sub(ops::add(ops::square(lat.mean), sigma2), ops::scale(lat.log_std, T(2)));
  return ops::scale(ops::add_scalar(ops::sum_all(inner), -static_cast<T>(inner.val().numel())),
                    T(0.5) / batch);
}

template <typename T>
struct DecompTerms {
  Var<T> mi, tc, dimkl;
};

// Minibatch-weighted decomposition of the averaged KL into index-code
// mutual information, total correlation, and dimension-wise KL. The
// aggregate density under the empirical mixture over the N training samples
// is estimated from the batch with stratified weights: the sample's own
// posterior enters at its true mixture weight 1/N and each of the other M-1
// batch posteriors stands in for (N-1)/(M-1) population members:
//   log q(z_i)      ~ logsumexp_j [ log q(z_i | j) + log w_ij ]
//   log q_k(z_{ik}) ~ logsumexp_j [ log q_k(z_{ik} | j) + log w_ij ]
//   w_ii = 1/N,  w_ij = (N-1) / (N (M-1))
//   mi    = mean_i [ log q(z_i | i) - log q(z_i) ]
//   tc    = mean_i [ log q(z_i) - sum_k log q_k(z_{ik}) ]
//   dimkl = mean_i [ sum_k ( log q_k(z_{ik}) - log p(z_{ik}) ) ]
// At M = N every weight is 1/N and the estimate is the exact empirical
// mixture; a flat -log(N M) shift instead would offset mi by log N and tc
// by (K-1) log N, which contradicts the closed-form fixtures.
template <typename T>
DecompTerms<T> domain_kl_decomposition(const GaussianLatent<T>& lat,
                                       const EstimatorContext& ctx) {
  const int64_t m = lat.rows();
  const int64_t k = lat.width();
  if (m < 2) throw TrainingError("decomposition estimator needs a batch of at least 2");
  const T n = static_cast<T>(ctx.dataset_size);
  const T log_w_own = -std::log(n);
  const T log_w_cross = std::log(n - 1) - std::log(n) - std::log(static_cast<T>(m - 1));
  const T half_log_2pi = T(0.5) * std::log(T(2) * std::numbers::pi_v<T>);

  Tensor<T> w_joint({m, m});
  Tensor<T> w_dims({m, m, k});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < m; ++j) {
      const T w = i == j ? log_w_own : log_w_cross;
      w_joint[i * m + j] = w;
      for (int64_t d = 0; d < k; ++d) w_dims[(i * m + j) * k + d] = w;
    }

  auto cond = ops::gauss_logpdf_matrix(lat.value, lat.mean, lat.log_std);  // [M,M,K]
  auto joint_cond = ops::sum_last(cond, k);                                // [M,M]
  auto log_qzi = ops::reshape(
      ops::logsumexp_mid(ops::add(joint_cond, Var<T>::constant(std::move(w_joint))), m, m, 1),
      {m});                                                                // [M]
  auto log_qzik =
      ops::logsumexp_mid(ops::add(cond, Var<T>::constant(std::move(w_dims))), m, m, k);  // [M,K]
  auto diag_cond = ops::diag(joint_cond, m);                                             // [M]

  auto prior = ops::add_scalar(ops::scale(ops::square(lat.value), T(-0.5)), -half_log_2pi);

  const T inv_m = T(1) / static_cast<T>(m);
  DecompTerms<T> out;
  out.mi = ops::scale(ops::sum_all(ops::sub(diag_cond, log_qzi)), inv_m);
  out.tc = ops::scale(ops::sum_all(ops::sub(log_qzi, ops::sum_last(log_qzik, k))), inv_m);
  out.dimkl = ops::scale(ops::sum_all(ops::sub(log_qzik, prior)), inv_m);
  return out;
}

template <typename T>
struct VaeParts {
  Var<T> recon, kl_sample, mi, tc, dimkl, total;
  bool empty = false;  // exemplar form only: no sample had a usable exemplar
  int n_used = 0;
};

// Eq.-(1) objective with the domain-branch KL replaced by the decomposition;
// the sample branch keeps the closed form. `disable_disentangle` swaps the
// decomposition back for the closed-form KL on z_d (logged under dimkl).
template <typename T>
VaeParts<T> vae_loss(const Var<T>& x, const Var<T>& x_hat, const GaussianLatent<T>& z_s,
                     const GaussianLatent<T>& z_d, T beta, T xi, const EstimatorContext& ctx,
                     bool disable_disentangle = false) {
  VaeParts<T> parts;
  parts.recon = reconstruction_loss(x, x_hat);
  parts.kl_sample = gaussian_kl(z_s);
  auto zero = Var<T>::constant(Tensor<T>::scalar(T(0)));
  if (disable_disentangle || z_d.rows() < 2) {
    // Plain closed-form KL on the domain branch, logged under dimkl. Also the
    // M=1 fallback, where the decomposition estimator is undefined.
    parts.mi = zero;
    parts.tc = zero;
    parts.dimkl = gaussian_kl(z_d);
    parts.total = ops::add(ops::add(parts.recon, parts.kl_sample), parts.dimkl);
  } else {
    auto decomp = domain_kl_decomposition(z_d, ctx);
    parts.mi = decomp.mi;
    parts.tc = decomp.tc;
    parts.dimkl = decomp.dimkl;
    auto domain_term =
        ops::add(parts.mi, ops::add(ops::scale(parts.tc, beta), ops::scale(parts.dimkl, xi)));
    parts.total = ops::add(ops::add(parts.recon, parts.kl_sample), domain_term);
  }
  parts.n_used = static_cast<int>(x.val().dim(0));
  return parts;
}

// Eq.-(2) exemplar objective: same functional form, with the exemplar v as
// the reconstruction target of the fake decode and the KL taken on the
// latents actually sampled (z_s of x, z_{d'} of the resolved fake domain).
// Callers pass only the rows whose exemplar resolved; an empty batch yields
// a flagged zero.
template <typename T>
VaeParts<T> exemplar_loss(const Var<T>& v, const Var<T>& v_hat, const GaussianLatent<T>& z_s,
                          const GaussianLatent<T>& z_dprime, T beta, T xi,
                          const EstimatorContext& ctx, bool disable_disentangle = false) {
  if (v.val().numel() == 0 || v.val().dim(0) == 0) {
    VaeParts<T> parts;
    auto zero = Var<T>::constant(Tensor<T>::scalar(T(0)));
    parts.recon = parts.kl_sample = parts.mi = parts.tc = parts.dimkl = parts.total = zero;
    parts.empty = true;
    return parts;
  }
  return vae_loss(v, v_hat, z_s, z_dprime, beta, xi, ctx, disable_disentangle);
}

template <typename T>
struct ObjectiveParts {
  Var<T> vae_total, exemplar, source_ce, target_entropy, pseudo_ce;
};

// Eq. (9): L = lambda*L_s + L_t + gamma*L_VAE + alpha*L_exe + L_pseudo.
// Any non-finite component aborts with the component named.
template <typename T>
Var<T> combine_objective(const ObjectiveParts<T>& parts, T lambda, T gamma, T alpha) {
  auto check = [](const Var<T>& v, const char* name) {
    if (!std::isfinite(static_cast<double>(v.item())))
      throw TrainingError(std::string("non-finite loss component: ") + name);
  };
  check(parts.source_ce, "source_ce");
  check(parts.target_entropy, "target_entropy");
  check(parts.vae_total, "vae");
  check(parts.exemplar, "exemplar");
  check(parts.pseudo_ce, "pseudo_ce");
  auto total = ops::add(
      ops::add(ops::scale(parts.source_ce, lambda), parts.target_entropy),
      ops::add(ops::add(ops::scale(parts.vae_total, gamma), ops::scale(parts.exemplar, alpha)),
               parts.pseudo_ce));
  check(total, "total");
  return total;
}

}  // namespace losses
}  // namespace vdd

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedhpd/env.hpp"
#include "fedhpd/policy.hpp"
#include "fedhpd/reinforce.hpp"

namespace fedhpd {

/// Variance decomposition of the regularized gradient g' = g_J - g_KL (lambda = 1).
///
/// Vector variances are traces of sample covariances (denominator N - 1). The `m2_*` block is
/// the same decomposition using second moments about zero, E||x||^2; for a deterministic KL
/// gradient that block satisfies m2_jprime < m2_j exactly when cos(angle) > ||g_KL|| / (2 ||g_J||).
struct VarianceReport {
  int round = 0;
  Index n_samples = 0;
  Index n_params = 0;

  double var_j_trace = 0.0;
  double var_j_mean = 0.0;  // per-coordinate mean of the variance
  double var_kl_trace = 0.0;
  double cov_trace = 0.0;
  double var_jprime_direct = 0.0;
  double var_jprime_reconstructed = 0.0;
  double identity_residual = 0.0;  // relative

  double m2_j = 0.0;
  double m2_kl = 0.0;
  double m2_cross = 0.0;
  double m2_jprime_direct = 0.0;
  double m2_jprime_reconstructed = 0.0;

  double mean_j_norm = 0.0;
  double kl_norm = 0.0;
  double cos_angle = 0.0;
  double norm_ratio = 0.0;  // ||g_KL|| / ||g_J||
  bool condition_holds = false;
  bool condition_vacuous = false;  // ||g_J|| == 0, the angle is undefined
};

/// Builds the report from per-sample gradients stored as columns (n_params x N).
VarianceReport variance_report(const MatrixXd& j_samples, const MatrixXd& kl_samples);

/// Draws `n_samples` single-trajectory REINFORCE gradients and pairs each with the (deterministic
/// given theta) KL gradient against `consensus` on `public_states`.
template <Environment E>
VarianceReport gradient_variance(const Policy& policy, const E& env, const MatrixXd& public_states,
                                 const DistributionBatch& consensus, int n_samples, double gamma, Rng& rng) {
  if (n_samples < 2) throw ConfigError("gradient_variance: n_samples must be >= 2");
  const VectorXd kl_grad = kl_batch_loss(policy, public_states, consensus).grad;
  MatrixXd j(policy.param_count(), n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const Trajectory traj = run_episode(policy, env, rng);
    j.col(i) = policy_gradient(policy, std::span<const Trajectory>(&traj, 1), gamma);
  }
  return variance_report(j, kl_grad.replicate(1, n_samples));
}

/// N >= Var / (delta * eps^2), rounded up.
std::uint64_t chebyshev_samples(double variance, double epsilon, double delta);

struct SmoothnessProbe {
  Index n_pairs = 0;
  double radius = 0.0;
  double lipschitz_estimate = 0.0;  // max ||grad KL(theta') - grad KL(theta)|| / ||theta' - theta||
  double g_estimate = 0.0;          // max ||grad log pi(a|s)||
  double m_estimate = 0.0;          // max finite-difference Hessian-vector norm of log pi
  double l_kl_bound = 0.0;          // G (2 + ln |A|)
  double l_j_bound = 0.0;           // R_max / (1 - gamma)^2 (G^2 + M)
  bool categorical = true;
};

struct ProbeOptions {
  int n_pairs = 200;
  double radius = 1e-3;
  Index states_per_pair = 64;  // states sampled from the public set for the G and M estimates
  double hessian_step = 1e-4;
  double gamma = 0.99;
  double reward_max = 1.0;
};

/// Samples theta from `factory`, perturbs it by `radius` along a random unit direction and
/// compares KL gradients. The bound G (2 + ln |A|) is derived for softmax heads only.
SmoothnessProbe lipschitz_probe(const std::function<Policy(Rng&)>& factory, const MatrixXd& public_states,
                                const DistributionBatch& consensus, const ProbeOptions& options, Rng& rng);

}  // namespace fedhpd

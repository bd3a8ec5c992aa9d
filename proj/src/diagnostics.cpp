#include "fedhpd/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedhpd {

namespace {

/// Trace of the sample cross-covariance between the columns of a and b.
double cov_trace(const MatrixXd& a, const MatrixXd& b) {
  const double n = static_cast<double>(a.cols());
  const MatrixXd ac = a.colwise() - a.rowwise().mean();
  const MatrixXd bc = b.colwise() - b.rowwise().mean();
  return (ac.array() * bc.array()).sum() / (n - 1.0);
}

double relative_gap(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), std::numeric_limits<double>::min()});
  return std::abs(a - b) / scale;
}

}  // namespace

VarianceReport variance_report(const MatrixXd& j_samples, const MatrixXd& kl_samples) {
  if (j_samples.rows() != kl_samples.rows() || j_samples.cols() != kl_samples.cols())
    throw ConfigError("variance_report: sample matrices differ in shape");
  if (j_samples.cols() < 2) throw ConfigError("variance_report: need at least two samples");

  VarianceReport r;
  r.n_samples = j_samples.cols();
  r.n_params = j_samples.rows();
  const double n = static_cast<double>(r.n_samples);

  r.var_j_trace = cov_trace(j_samples, j_samples);
  r.var_j_mean = r.var_j_trace / static_cast<double>(r.n_params);
  r.var_kl_trace = cov_trace(kl_samples, kl_samples);
  r.cov_trace = cov_trace(j_samples, kl_samples);
  const MatrixXd diff = j_samples - kl_samples;
  r.var_jprime_direct = cov_trace(diff, diff);
  r.var_jprime_reconstructed = r.var_j_trace + r.var_kl_trace - 2.0 * r.cov_trace;
  r.identity_residual = relative_gap(r.var_jprime_direct, r.var_jprime_reconstructed);

  r.m2_j = j_samples.squaredNorm() / n;
  r.m2_kl = kl_samples.squaredNorm() / n;
  r.m2_cross = (j_samples.array() * kl_samples.array()).sum() / n;
  r.m2_jprime_direct = diff.squaredNorm() / n;
  r.m2_jprime_reconstructed = r.m2_j + r.m2_kl - 2.0 * r.m2_cross;

  const VectorXd mean_j = j_samples.rowwise().mean();
  const VectorXd mean_kl = kl_samples.rowwise().mean();
  r.mean_j_norm = mean_j.norm();
  r.kl_norm = mean_kl.norm();
  if (r.mean_j_norm == 0.0) {
    r.condition_vacuous = true;
    r.condition_holds = false;
    return r;
  }
  r.norm_ratio = r.kl_norm / r.mean_j_norm;
  if (r.kl_norm > 0.0) r.cos_angle = std::clamp(mean_j.dot(mean_kl) / (r.mean_j_norm * r.kl_norm), -1.0, 1.0);
  r.condition_holds = r.kl_norm > 0.0 && r.cos_angle > 0.5 * r.norm_ratio;
  return r;
}

std::uint64_t chebyshev_samples(double variance, double epsilon, double delta) {
  if (!(epsilon > 0.0) || !(delta > 0.0)) throw ConfigError("chebyshev_samples: epsilon and delta must be positive");
  if (!(variance >= 0.0) || !std::isfinite(variance))
    throw ConfigError("chebyshev_samples: variance must be finite and non-negative");
  const double q = variance / (delta * epsilon * epsilon);
  double n = std::ceil(q);
  // Snap representation error such as 1000.0000000000001 back to the intended integer.
  if (n >= 1.0 && (n - 1.0) >= q * (1.0 - 1e-12)) n -= 1.0;
  return static_cast<std::uint64_t>(n);
}

SmoothnessProbe lipschitz_probe(const std::function<Policy(Rng&)>& factory, const MatrixXd& public_states,
                                const DistributionBatch& consensus, const ProbeOptions& options, Rng& rng) {
  if (options.n_pairs < 1) throw ConfigError("lipschitz_probe: n_pairs must be >= 1");
  if (!(options.radius > 0.0)) throw ConfigError("lipschitz_probe: radius must be positive");
  if (public_states.rows() < 1) throw ConfigError("lipschitz_probe: empty public state set");

  SmoothnessProbe probe;
  probe.n_pairs = options.n_pairs;
  probe.radius = options.radius;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<Index> pick_state(0, public_states.rows() - 1);

  auto random_unit = [&](Index n) {
    VectorXd u(n);
    for (Index i = 0; i < n; ++i) u(i) = normal(rng);
    return VectorXd(u / u.norm());
  };

  for (int pair = 0; pair < options.n_pairs; ++pair) {
    Policy base = factory(rng);
    if (pair == 0) probe.categorical = base.kind() == HeadKind::Categorical;
    Policy moved = base;
    moved.set_params(base.params() + options.radius * random_unit(base.param_count()));
    const double step = (moved.params() - base.params()).norm();
    if (step > 0.0) {
      const VectorXd g0 = kl_batch_loss(base, public_states, consensus).grad;
      const VectorXd g1 = kl_batch_loss(moved, public_states, consensus).grad;
      probe.lipschitz_estimate = std::max(probe.lipschitz_estimate, (g1 - g0).norm() / step);
    }

    // G and M over sampled (state, action) pairs at both endpoints.
    const Index n_states = std::min(options.states_per_pair, public_states.rows());
    for (Index k = 0; k < n_states; ++k) {
      const VectorXd s = public_states.row(pick_state(rng)).transpose();
      std::vector<Action> actions;
      if (base.kind() == HeadKind::Categorical) {
        for (Index a = 0; a < base.action_width(); ++a) actions.push_back(Action::discrete(static_cast<int>(a)));
      } else {
        actions.push_back(sample_action(base, s, rng));
      }
      for (const Action& a : actions) {
        const VectorXd g_base = log_prob_grad(base, s, a);
        probe.g_estimate = std::max({probe.g_estimate, g_base.norm(), log_prob_grad(moved, s, a).norm()});
        Policy nudged = base;
        nudged.set_params(base.params() + options.hessian_step * random_unit(base.param_count()));
        const double h = (nudged.params() - base.params()).norm();
        if (h > 0.0) probe.m_estimate = std::max(probe.m_estimate, (log_prob_grad(nudged, s, a) - g_base).norm() / h);
      }
    }
  }

  const double actions = static_cast<double>(consensus.width());
  probe.l_kl_bound = probe.g_estimate * (2.0 + std::log(actions));
  probe.l_j_bound = options.reward_max / ((1.0 - options.gamma) * (1.0 - options.gamma)) *
                    (probe.g_estimate * probe.g_estimate + probe.m_estimate);
  return probe;
}

}  // namespace fedhpd

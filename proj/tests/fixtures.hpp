// Random policies and small environments shared by the tests.
#pragma once

#include <random>

#include "fedhpd/env.hpp"
#include "fedhpd/policy.hpp"

namespace fixtures {

using namespace fedhpd;

/// A policy with 0-2 hidden layers of random width and activation, Gaussian-initialized weights.
inline Policy random_policy(Rng& rng, HeadKind kind, Index state_dim = 4, Index width = 2, double scale = 0.6) {
  std::uniform_int_distribution<int> w(2, 8), depth(0, 2), act(0, 1);
  std::vector<Index> hidden;
  std::vector<Activation> acts;
  const int d = depth(rng);
  for (int i = 0; i < d; ++i) {
    hidden.push_back(w(rng));
    acts.push_back(act(rng) ? Activation::Tanh : Activation::Relu);
  }
  auto net = make_mlp<double>(state_dim, hidden, acts, width);
  std::normal_distribution<double> n(0.0, scale);
  VectorXd p(net.param_count());
  for (Index i = 0; i < p.size(); ++i) p(i) = n(rng);
  net.set_params(p);
  if (kind == HeadKind::Categorical) return Policy::categorical(std::move(net));
  VectorXd log_std(width);
  for (Index i = 0; i < width; ++i) log_std(i) = std::uniform_real_distribution<double>(-1.0, 0.5)(rng);
  return Policy::gaussian(std::move(net), log_std);
}

inline MatrixXd random_states(Rng& rng, Index n, Index dim = 4, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  MatrixXd s(n, dim);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = d(rng);
  return s;
}

inline Action random_action(Rng& rng, const Policy& policy) {
  if (policy.kind() == HeadKind::Categorical)
    return Action::discrete(std::uniform_int_distribution<int>(0, static_cast<int>(policy.action_width()) - 1)(rng));
  std::normal_distribution<double> d(0.0, 1.0);
  VectorXd a(policy.action_width());
  for (Index i = 0; i < a.size(); ++i) a(i) = d(rng);
  return Action::continuous(a);
}

/// A random distribution batch of the policy's kind and width.
inline DistributionBatch random_consensus(Rng& rng, const Policy& policy, Index n) {
  DistributionBatch b;
  b.kind = policy.kind();
  std::uniform_real_distribution<double> u(0.05, 1.0);
  if (b.kind == HeadKind::Categorical) {
    b.probs.resize(n, policy.action_width());
    for (Index i = 0; i < b.probs.size(); ++i) b.probs.data()[i] = u(rng);
    for (Index r = 0; r < n; ++r) b.probs.row(r) /= b.probs.row(r).sum();
  } else {
    std::normal_distribution<double> d(0.0, 1.0);
    b.mean.resize(n, policy.action_width());
    b.variance.resize(n, policy.action_width());
    for (Index i = 0; i < b.mean.size(); ++i) {
      b.mean.data()[i] = d(rng);
      b.variance.data()[i] = u(rng) * 2.0;
    }
  }
  return b;
}

/// One-step bandit: fixed start state, reward depends only on the action, episode ends at once.
struct Bandit {
  VectorXd start = VectorXd::Zero(4);
  std::vector<double> rewards{1.0, 0.0};

  VectorXd reset(Rng&) const { return start; }
  StepResult step(const VectorXd& state, const Action& a) const {
    const double r = a.index >= 0 ? rewards[static_cast<std::size_t>(a.index)] : -a.value.squaredNorm();
    return {state, r, true};
  }
  int max_steps() const { return 1; }
  Index state_dim() const { return start.size(); }
};

static_assert(Environment<Bandit>);

}  // namespace fixtures

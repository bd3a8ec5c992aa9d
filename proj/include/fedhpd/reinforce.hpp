#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedhpd/env.hpp"
#include "fedhpd/nn.hpp"
#include "fedhpd/policy.hpp"

namespace fedhpd {

/// One heterogeneous agent: architecture, head, optimizer settings.
struct AgentConfig {
  int id = 0;
  std::vector<Index> hidden;
  std::vector<Activation> activations;
  HeadKind head = HeadKind::Categorical;
  double learning_rate = 1e-3;
  int episodes_per_round = 1;
  bool reward_to_go = false;
  double gamma = 0.99;
  double initial_log_std = 0.0;

  /// e.g. "64x64 (tanh, tanh)".
  std::string describe() const;
  void validate() const;
};

struct RoundStats {
  int agent_id = 0;
  int round = 0;
  std::vector<double> episode_returns;
  double mean_return = 0.0;
  double discounted_return = 0.0;
  double grad_norm = 0.0;
  double wall_seconds = 0.0;
};

/// Deterministic per-agent RNG seed derived from the run seed.
std::uint64_t agent_seed(std::uint64_t run_seed, int agent_id);

/// Glorot-initialized policy for the given environment shape.
Policy make_policy(const AgentConfig& config, Index state_dim, Index action_width, Rng& rng);

template <Environment E>
Trajectory run_episode(const Policy& policy, const E& env, Rng& rng) {
  Trajectory traj;
  VectorXd state = env.reset(rng);
  for (int t = 0; t < env.max_steps(); ++t) {
    Action action = sample_action(policy, state, rng);
    StepResult r = env.step(state, action);
    traj.steps.push_back({state, std::move(action), r.reward, r.next_state, r.done});
    if (r.done) break;
    state = std::move(r.next_state);
  }
  return traj;
}

template <Environment E>
std::vector<Trajectory> collect_trajectories(const Policy& policy, const E& env, const AgentConfig& config,
                                             Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(config.episodes_per_round));
  for (int e = 0; e < config.episodes_per_round; ++e) out.push_back(run_episode(policy, env, rng));
  return out;
}

/// REINFORCE estimate: mean over trajectories of [sum_t grad log pi(a_t|s_t)] * R(tau), or with
/// per-step discounted reward-to-go coefficients when `reward_to_go` is set.
VectorXd policy_gradient(const Policy& policy, std::span<const Trajectory> trajectories, double gamma,
                         bool reward_to_go = false);

/// Gradient ascent on J through Adam (Adam descends on -grad).
void local_update(Policy& policy, AdamState<double>& adam, const VectorXd& grad, double lr);

/// A policy with its own optimizer states and RNG stream. Digestion steps use a separate Adam
/// state from local training.
class Agent {
 public:
  Agent(AgentConfig config, Index state_dim, Index action_width, std::uint64_t run_seed);

  const AgentConfig& config() const { return config_; }
  const Policy& policy() const { return policy_; }
  Policy& policy() { return policy_; }
  AdamState<double>& local_adam() { return local_adam_; }
  AdamState<double>& digest_adam() { return digest_adam_; }
  Rng& rng() { return rng_; }

  /// Collect, estimate the gradient, step. Numeric failures are rethrown with agent/round context.
  template <Environment E>
  RoundStats train_round(const E& env, int round);

 private:
  AgentConfig config_;
  Rng rng_;
  Policy policy_;
  AdamState<double> local_adam_;
  AdamState<double> digest_adam_;
};

template <Environment E>
RoundStats Agent::train_round(const E& env, int round) {
  const auto start = std::chrono::steady_clock::now();
  RoundStats stats;
  stats.agent_id = config_.id;
  stats.round = round;
  try {
    const std::vector<Trajectory> trajs = collect_trajectories(policy_, env, config_, rng_);
    const VectorXd grad = policy_gradient(policy_, trajs, config_.gamma, config_.reward_to_go);
    local_update(policy_, local_adam_, grad, config_.learning_rate);
    for (const auto& t : trajs) {
      stats.episode_returns.push_back(t.undiscounted_return());
      stats.discounted_return += discounted_return(t, config_.gamma);
    }
    stats.discounted_return /= static_cast<double>(trajs.size());
    double sum = 0.0;
    for (double r : stats.episode_returns) sum += r;
    stats.mean_return = sum / static_cast<double>(stats.episode_returns.size());
    stats.grad_norm = grad.norm();
  } catch (const NumericError& e) {
    throw NumericError("agent " + std::to_string(config_.id) + ", round " + std::to_string(round) + ": " +
                       e.what());
  }
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

/// Independent REINFORCE training of every agent for `rounds` rounds (no collaboration).
/// Returns the final agents; `on_round` sees each agent's stats.
std::vector<Agent> train_independent(const std::vector<AgentConfig>& configs, const EnvSpec& env,
                                     int rounds, std::uint64_t seed,
                                     const std::function<void(const RoundStats&)>& on_round = {});

}  // namespace fedhpd

#include "fedhpd/reinforce.hpp"

#include <sstream>

namespace fedhpd {

std::string AgentConfig::describe() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < hidden.size(); ++i) out << (i ? "x" : "") << hidden[i];
  out << " (";
  for (std::size_t i = 0; i < activations.size(); ++i) out << (i ? ", " : "") << to_string(activations[i]);
  out << ")";
  return out.str();
}

void AgentConfig::validate() const {
  const std::string who = "agent " + std::to_string(id) + ": ";
  if (!(learning_rate > 0.0)) throw ConfigError(who + "learning rate must be positive");
  if (hidden.size() != activations.size()) throw ConfigError(who + "hidden widths and activations differ in length");
  for (Index w : hidden)
    if (w <= 0) throw ConfigError(who + "hidden widths must be positive");
  if (episodes_per_round < 1) throw ConfigError(who + "episodes_per_round must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError(who + "gamma must lie in (0, 1]");
}

std::uint64_t agent_seed(std::uint64_t run_seed, int agent_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(run_seed & 0xffffffffu), static_cast<std::uint32_t>(run_seed >> 32),
                    static_cast<std::uint32_t>(agent_id), 0x46484244u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

Policy make_policy(const AgentConfig& config, Index state_dim, Index action_width, Rng& rng) {
  config.validate();
  Mlp<double> net = make_mlp<double>(state_dim, config.hidden, config.activations, action_width);
  net.init_glorot(rng);
  if (config.head == HeadKind::Categorical) return Policy::categorical(std::move(net));
  return Policy::gaussian(std::move(net), VectorXd::Constant(action_width, config.initial_log_std));
}

VectorXd policy_gradient(const Policy& policy, std::span<const Trajectory> trajectories, double gamma,
                         bool reward_to_go) {
  if (trajectories.empty()) throw ConfigError("policy_gradient: no trajectories");
  std::size_t total = 0;
  for (const auto& t : trajectories) total += t.length();

  MatrixXd states(static_cast<Index>(total), policy.state_dim());
  std::vector<Action> actions;
  std::vector<double> weights;
  actions.reserve(total);
  weights.reserve(total);
  const double inv_count = 1.0 / static_cast<double>(trajectories.size());

  Index row = 0;
  for (const auto& traj : trajectories) {
    const std::size_t len = traj.length();
    std::vector<double> coeff(len);
    if (reward_to_go) {
      // sum_{t' >= t} gamma^{t'} r_{t'}
      std::vector<double> discounts(len);
      double w = 1.0;
      for (std::size_t t = 0; t < len; ++t, w *= gamma) discounts[t] = w * traj.steps[t].reward;
      double acc = 0.0;
      for (std::size_t t = len; t-- > 0;) coeff[t] = acc += discounts[t];
    } else {
      std::fill(coeff.begin(), coeff.end(), discounted_return(traj, gamma));
    }
    for (std::size_t t = 0; t < len; ++t) {
      states.row(row++) = traj.steps[t].state.transpose();
      actions.push_back(traj.steps[t].action);
      weights.push_back(coeff[t] * inv_count);
    }
  }
  return weighted_score(policy, states, actions, weights);
}

void local_update(Policy& policy, AdamState<double>& adam, const VectorXd& grad, double lr) {
  VectorXd params = policy.params();
  const VectorXd descent = -grad;
  adam_step(params, descent, adam, lr);
  policy.set_params(params);
}

Agent::Agent(AgentConfig config, Index state_dim, Index action_width, std::uint64_t run_seed)
    : config_(std::move(config)), rng_(agent_seed(run_seed, config_.id)) {
  policy_ = make_policy(config_, state_dim, action_width, rng_);
  local_adam_ = AdamState<double>(policy_.param_count());
  digest_adam_ = AdamState<double>(policy_.param_count());
}

std::vector<Agent> train_independent(const std::vector<AgentConfig>& configs, const EnvSpec& spec, int rounds,
                                     std::uint64_t seed, const std::function<void(const RoundStats&)>& on_round) {
  const CartPole env(spec);
  std::vector<Agent> agents;
  for (const auto& c : configs) agents.emplace_back(c, env.state_dim(), env.action_width(), seed);
  for (int i = 0; i < rounds; ++i) {
    for (auto& a : agents) {
      RoundStats s = a.train_round(env, i);
      if (on_round) on_round(s);
    }
  }
  return agents;
}

}  // namespace fedhpd

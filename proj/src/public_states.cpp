#include "fedhpd/public_states.hpp"

#include "fedhpd/reinforce.hpp"

namespace fedhpd {

PublicStateSet generate_public_states(const EnvSpec& spec, const PublicStateOptions& options) {
  if (options.size <= 0) throw ConfigError("public state set size must be >= 1");
  if (options.warmup_rounds < 0) throw ConfigError("warmup_rounds must be >= 0");
  if (options.rollouts < 1) throw ConfigError("rollouts must be >= 1");

  const CartPole env(spec);
  AgentConfig virtual_config;
  virtual_config.id = 0;
  virtual_config.hidden = {32, 32};
  virtual_config.activations = {Activation::Tanh, Activation::Tanh};
  virtual_config.head = env.head_kind();
  virtual_config.learning_rate = 1e-3;

  Agent virtual_agent(virtual_config, env.state_dim(), env.action_width(), options.seed);
  for (int i = 0; i < options.warmup_rounds; ++i) virtual_agent.train_round(env, i);

  std::vector<VectorXd> visited;
  for (int r = 0; r < options.rollouts; ++r) {
    const Trajectory traj = run_episode(virtual_agent.policy(), env, virtual_agent.rng());
    for (const auto& t : traj.steps) visited.push_back(t.state);
  }

  Rng& rng = virtual_agent.rng();
  PublicStateSet set;
  set.generated = true;
  set.states.resize(options.size, env.state_dim());
  const auto available = static_cast<Index>(visited.size());
  if (available >= options.size) {
    std::vector<std::size_t> order(visited.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (Index i = 0; i < options.size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), order.size() - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
      set.states.row(i) = visited[order[static_cast<std::size_t>(i)]].transpose();
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, visited.size() - 1);
    for (Index i = 0; i < options.size; ++i) set.states.row(i) = visited[pick(rng)].transpose();
  }
  return set;
}

}  // namespace fedhpd

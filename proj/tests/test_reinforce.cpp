#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "fedhpd/error.hpp"
#include "fedhpd/public_states.hpp"
#include "fedhpd/reinforce.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fedhpd;

namespace {

AgentConfig small_agent(int id, double lr = 1e-2) {
  AgentConfig a;
  a.id = id;
  a.hidden = {8};
  a.activations = {Activation::Tanh};
  a.learning_rate = lr;
  return a;
}

Transition step(const VectorXd& s, int a, double r) { return {s, Action::discrete(a), r, s, false}; }

}  // namespace

TEST_CASE("agent seeds are deterministic and distinct") {
  CHECK(agent_seed(20, 1) == agent_seed(20, 1));
  std::set<std::uint64_t> seen;
  for (std::uint64_t run : {20u, 25u, 30u})
    for (int id = 0; id < 10; ++id) seen.insert(agent_seed(run, id));
  CHECK(seen.size() == 30);
}

TEST_CASE("single-step gradient is the score times the reward") {
  Rng rng(1);
  const Policy policy = fixtures::random_policy(rng, HeadKind::Categorical);
  const VectorXd s = fixtures::random_states(rng, 1).row(0).transpose();
  Trajectory t;
  t.steps.push_back(step(s, 1, 2.5));
  const VectorXd g = policy_gradient(policy, std::span<const Trajectory>(&t, 1), 0.99);
  CHECK((g - 2.5 * log_prob_grad(policy, s, Action::discrete(1))).norm() < 1e-12);
}

TEST_CASE("whole-trajectory and reward-to-go weights") {
  Rng rng(2);
  const Policy policy = fixtures::random_policy(rng, HeadKind::Categorical);
  const MatrixXd states = fixtures::random_states(rng, 3);
  const double gamma = 0.9;
  const double rewards[] = {1.0, 2.0, 4.0};
  Trajectory t;
  for (int i = 0; i < 3; ++i) t.steps.push_back(step(states.row(i).transpose(), i % 2, rewards[i]));

  std::vector<VectorXd> scores;
  for (int i = 0; i < 3; ++i) scores.push_back(log_prob_grad(policy, states.row(i).transpose(), Action::discrete(i % 2)));
  const double total = 1.0 + 0.9 * 2.0 + 0.81 * 4.0;
  const VectorXd whole = total * (scores[0] + scores[1] + scores[2]);
  const VectorXd to_go = total * scores[0] + (0.9 * 2.0 + 0.81 * 4.0) * scores[1] + (0.81 * 4.0) * scores[2];

  const std::span<const Trajectory> one(&t, 1);
  CHECK((policy_gradient(policy, one, gamma) - whole).norm() < 1e-12);
  CHECK((policy_gradient(policy, one, gamma, true) - to_go).norm() < 1e-12);
}

TEST_CASE("gradient averages over trajectories") {
  Rng rng(3);
  const Policy policy = fixtures::random_policy(rng, HeadKind::Categorical);
  const MatrixXd states = fixtures::random_states(rng, 2);
  std::vector<Trajectory> ts(2);
  ts[0].steps.push_back(step(states.row(0).transpose(), 0, 1.0));
  ts[1].steps.push_back(step(states.row(1).transpose(), 1, 3.0));
  const VectorXd expected = 0.5 * (log_prob_grad(policy, states.row(0).transpose(), Action::discrete(0)) +
                                   3.0 * log_prob_grad(policy, states.row(1).transpose(), Action::discrete(1)));
  CHECK((policy_gradient(policy, ts, 0.99) - expected).norm() < 1e-12);
  CHECK_THROWS_AS(policy_gradient(policy, {}, 0.99), ConfigError);
}

TEST_CASE("local updates raise the probability of the rewarded action") {
  fixtures::Bandit bandit;
  Agent agent(small_agent(1, 0.05), 4, 2, 7);
  const double before = action_distribution(agent.policy(), bandit.start).probs(0);
  for (int i = 0; i < 200; ++i) agent.train_round(bandit, i);
  const double after = action_distribution(agent.policy(), bandit.start).probs(0);
  CHECK(after > before);
  CHECK(after > 0.9);
}

TEST_CASE("train_round is deterministic under the seed") {
  const CartPole env;
  Agent a(small_agent(3), 4, 2, 20), b(small_agent(3), 4, 2, 20), c(small_agent(3), 4, 2, 21);
  for (int i = 0; i < 5; ++i) {
    const RoundStats sa = a.train_round(env, i);
    const RoundStats sb = b.train_round(env, i);
    CHECK(sa.episode_returns == sb.episode_returns);
    c.train_round(env, i);
  }
  CHECK(a.policy().params() == b.policy().params());
  CHECK(a.policy().params() != c.policy().params());
}

TEST_CASE("round statistics") {
  const CartPole env;
  AgentConfig cfg = small_agent(2);
  cfg.episodes_per_round = 3;
  Agent agent(cfg, 4, 2, 5);
  const RoundStats s = agent.train_round(env, 0);
  CHECK(s.episode_returns.size() == 3);
  CHECK(s.mean_return == doctest::Approx((s.episode_returns[0] + s.episode_returns[1] + s.episode_returns[2]) / 3.0));
  CHECK(s.discounted_return <= s.mean_return);
  CHECK(s.grad_norm > 0.0);
  CHECK(s.agent_id == 2);
}

TEST_CASE("agent configs are validated") {
  AgentConfig a = small_agent(1);
  a.activations.clear();
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = small_agent(1, 0.0);
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = small_agent(1);
  a.hidden = {0};
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = small_agent(1);
  a.episodes_per_round = 0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  CHECK(small_agent(1).describe() == "8 (tanh)");
}

TEST_CASE("independent training matches per-agent training") {
  EnvSpec spec;
  std::vector<AgentConfig> configs{small_agent(1), small_agent(2)};
  std::vector<RoundStats> seen;
  const auto agents = train_independent(configs, spec, 4, 9, [&](const RoundStats& s) { seen.push_back(s); });
  CHECK(seen.size() == 8);
  const CartPole env(spec);
  Agent solo(configs[1], 4, 2, 9);
  for (int i = 0; i < 4; ++i) solo.train_round(env, i);
  CHECK(solo.policy().params() == agents[1].policy().params());
}

TEST_CASE("public state generation") {
  EnvSpec spec;
  PublicStateOptions opts;
  opts.warmup_rounds = 5;
  opts.rollouts = 5;
  opts.size = 40;
  const PublicStateSet a = generate_public_states(spec, opts);
  CHECK(a.states.rows() == 40);
  CHECK(a.states.cols() == 4);
  CHECK(a.generated);
  CHECK(generate_public_states(spec, opts).states == a.states);
  opts.seed = 2;
  CHECK(generate_public_states(spec, opts).states != a.states);

  // More states requested than visited: drawn with replacement.
  opts.rollouts = 1;
  opts.size = 2000;
  CHECK(generate_public_states(spec, opts).states.rows() == 2000);
  opts.size = 0;
  CHECK_THROWS_AS(generate_public_states(spec, opts), ConfigError);
}

TEST_CASE("the gradient estimate is unbiased on a two-armed bandit") {
  auto net = make_mlp<double>(4, {}, {}, 2);
  VectorXd p = VectorXd::Zero(net.param_count());
  p(net.param_count() - 2) = 0.2;
  p(net.param_count() - 1) = 1.0;
  net.set_params(p);
  const Policy policy = Policy::categorical(std::move(net));
  fixtures::Bandit bandit;
  const double pi0 = oracle::softmax({0.2, 1.0})[0];
  // J = pi0, so dJ/db = pi0 (e_0 - pi); the weights see a zero state.
  VectorXd analytic = VectorXd::Zero(policy.param_count());
  analytic(policy.param_count() - 2) = pi0 * (1.0 - pi0);
  analytic(policy.param_count() - 1) = -pi0 * (1.0 - pi0);

  Rng rng(11);
  const int n = 10000;
  VectorXd sum = VectorXd::Zero(policy.param_count()), sum_sq = sum;
  for (int i = 0; i < n; ++i) {
    const Trajectory t = run_episode(policy, bandit, rng);
    const VectorXd g = policy_gradient(policy, std::span<const Trajectory>(&t, 1), 0.99);
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  const VectorXd mean = sum / n;
  const VectorXd se = ((sum_sq / n - mean.cwiseProduct(mean)) / (n - 1)).cwiseSqrt();
  for (Index i = 0; i < mean.size(); ++i) {
    if (se(i) == 0.0) CHECK(mean(i) == analytic(i));
    else CHECK(std::abs(mean(i) - analytic(i)) < 3.0 * se(i));
  }
}

TEST_CASE("with positive rewards the step raises the log-likelihood of the taken actions") {
  Rng rng(12);
  const CartPole env;
  for (int t = 0; t < 20; ++t) {
    const Policy policy = fixtures::random_policy(rng, HeadKind::Categorical);
    const Trajectory traj = run_episode(policy, env, rng);
    VectorXd score = VectorXd::Zero(policy.param_count());
    for (const auto& s : traj.steps) score += log_prob_grad(policy, s.state, s.action);
    const VectorXd g = policy_gradient(policy, std::span<const Trajectory>(&traj, 1), 0.99);
    CHECK(g.dot(score) > 0.0);
    CHECK(traj.undiscounted_return() >= 0.0);
  }
}

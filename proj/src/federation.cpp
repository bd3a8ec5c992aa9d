#include "fedhpd/federation.hpp"

#include <cmath>

#include "fedhpd/parallel.hpp"

namespace fedhpd {

void FedRunConfig::validate() const {
  if (agents.empty()) throw ConfigError("federation needs at least one agent");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (interval && *interval < 1) throw ConfigError("distillation interval must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  const HeadKind expected = CartPole(env).head_kind();
  for (const auto& a : agents) {
    a.validate();
    if (a.head != expected)
      throw ConfigError("agent " + std::to_string(a.id) + " has a " + std::string(to_string(a.head)) +
                        " head but the environment needs " + std::string(to_string(expected)));
  }
}

bool is_distillation_round(int round, std::optional<int> interval) {
  return interval.has_value() && (round + 1) % *interval == 0;
}

DistributionBatch aggregate(std::span<const DistributionBatch> batches, std::span<const double> weights) {
  if (batches.empty()) throw ConfigError("aggregate: no batches");
  const auto k = batches.size();
  if (!weights.empty()) {
    if (weights.size() != k) throw ConfigError("aggregate: one weight per batch required");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw ConfigError("aggregate: weights must be non-negative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("aggregate: weights must sum to 1");
  }
  const DistributionBatch& first = batches.front();
  for (const auto& b : batches) {
    if (b.kind != first.kind) throw ConfigError("aggregate: mixed distribution kinds");
    if (b.n_states() != first.n_states() || b.width() != first.width())
      throw ConfigError("aggregate: batch shapes differ");
  }
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 / static_cast<double>(k) : weights[i]; };

  // Accumulate offsets from the first batch so identical inputs reproduce it bit-for-bit.
  DistributionBatch out = first;
  for (std::size_t i = 1; i < k; ++i) {
    const double w = weight(i);
    if (first.kind == HeadKind::Categorical) {
      out.probs += w * (batches[i].probs - first.probs);
    } else {
      out.mean += w * (batches[i].mean - first.mean);
      out.variance += w * (batches[i].variance - first.variance);
    }
  }
  return out;
}

ConsensusRecord distillation_round(std::span<Agent> agents, const MatrixXd& public_states, int round,
                                   int workers) {
  if (agents.empty()) throw ConfigError("distillation_round: no agents");
  ConsensusRecord record;
  record.round = round;

  // Knowledge extraction and upload.
  std::vector<std::vector<unsigned char>> uploads(agents.size());
  parallel_for(agents.size(), workers, [&](std::size_t i) {
    uploads[i] = encode_batch(extract_batch(agents[i].policy(), public_states));
  });

  // Server: decode, aggregate, broadcast.
  std::vector<DistributionBatch> batches;
  batches.reserve(uploads.size());
  for (const auto& u : uploads) {
    record.upload_bytes += u.size();
    batches.push_back(decode_batch(u));
  }
  const std::vector<unsigned char> broadcast = encode_batch(aggregate(batches));
  record.broadcast_bytes = broadcast.size();
  record.consensus = decode_batch(broadcast);

  // Knowledge digestion: one descent step on KL(local || consensus) per agent.
  record.kl_losses.resize(agents.size());
  record.kl_grad_norms.resize(agents.size());
  parallel_for(agents.size(), workers, [&](std::size_t i) {
    Agent& agent = agents[i];
    try {
      const KlLoss kl = kl_batch_loss(agent.policy(), public_states, record.consensus);
      VectorXd params = agent.policy().params();
      adam_step(params, kl.grad, agent.digest_adam(), agent.config().learning_rate);
      agent.policy().set_params(params);
      record.kl_losses[i] = kl.loss;
      record.kl_grad_norms[i] = kl.grad.norm();
    } catch (const NumericError& e) {
      throw NumericError("agent " + std::to_string(agent.config().id) + ", round " + std::to_string(round) +
                         " (digestion): " + e.what());
    }
  });
  return record;
}

std::vector<Agent> run(const FedRunConfig& config, const PublicStateSet& public_states,
                       const std::function<void(const RoundRecord&)>& on_round) {
  config.validate();
  const CartPole env(config.env);
  if (config.interval && public_states.states.cols() != env.state_dim())
    throw ConfigError("public state set dimension does not match the environment");
  if (config.interval && public_states.size() < 1) throw ConfigError("public state set is empty");

  std::vector<Agent> agents;
  agents.reserve(config.agents.size());
  for (const auto& a : config.agents) agents.emplace_back(a, env.state_dim(), env.action_width(), config.seed);

  for (int i = 0; i < config.rounds; ++i) {
    RoundRecord record;
    record.round = i;
    record.stats.resize(agents.size());
    parallel_for(agents.size(), config.workers,
                 [&](std::size_t k) { record.stats[k] = agents[k].train_round(env, i); });
    if (is_distillation_round(i, config.interval))
      record.consensus = distillation_round(agents, public_states.states, i, config.workers);
    if (on_round) on_round(record);
  }
  return agents;
}

}  // namespace fedhpd

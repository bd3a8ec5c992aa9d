#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedhpd/env.hpp"
#include "fedhpd/policy.hpp"
#include "fedhpd/reinforce.hpp"

namespace fedhpd {

/// Federated run settings. An empty `interval` is the NoFed baseline (no collaboration at all).
struct FedRunConfig {
  std::vector<AgentConfig> agents;
  EnvSpec env;
  int rounds = 600;
  std::optional<int> interval;
  std::uint64_t seed = 20;
  int workers = 1;

  void validate() const;
};

struct ConsensusRecord {
  int round = 0;
  DistributionBatch consensus;
  std::vector<double> kl_losses;
  std::vector<double> kl_grad_norms;
  std::size_t upload_bytes = 0;
  std::size_t broadcast_bytes = 0;
};

struct RoundRecord {
  int round = 0;
  std::vector<RoundStats> stats;
  std::optional<ConsensusRecord> consensus;
};

/// True when collaborative training follows local training in round `round` (0-based):
/// (round + 1) mod d == 0.
bool is_distillation_round(int round, std::optional<int> interval);

/// Elementwise consensus. Categorical: mean of probability rows. Gaussian: mean of means and mean
/// of variances. Optional weights must be non-negative and sum to 1; default is uniform 1/K.
DistributionBatch aggregate(std::span<const DistributionBatch> batches, std::span<const double> weights = {});

/// Extract every agent's batch from its current parameters, aggregate, then apply one KL descent
/// step per agent (learning rate alpha_k, digestion Adam state). Extraction for all agents finishes
/// before any agent is updated.
ConsensusRecord distillation_round(std::span<Agent> agents, const MatrixXd& public_states, int round,
                                   int workers = 1);

/// Runs the full protocol for `config.rounds` rounds and reports each round in order.
std::vector<Agent> run(const FedRunConfig& config, const PublicStateSet& public_states,
                       const std::function<void(const RoundRecord&)>& on_round = {});

}  // namespace fedhpd

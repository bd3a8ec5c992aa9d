#pragma once

#include <cstdint>

#include "fedhpd/env.hpp"

namespace fedhpd {

/// Virtual-agent settings used to generate the public state set on the server.
struct PublicStateOptions {
  int warmup_rounds = 200;
  int rollouts = 20;
  Index size = 512;
  std::uint64_t seed = 1;
};

/// Trains a 32x32 tanh virtual agent for `warmup_rounds` REINFORCE rounds, records every state it
/// acts in over `rollouts` episodes and draws `size` of them uniformly without replacement (with
/// replacement when fewer were visited).
PublicStateSet generate_public_states(const EnvSpec& spec, const PublicStateOptions& options);

}  // namespace fedhpd

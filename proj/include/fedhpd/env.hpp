#pragma once

#include <concepts>
#include <filesystem>
#include <iosfwd>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "fedhpd/policy.hpp"

namespace fedhpd {

enum class EnvKind { CartPoleDiscrete, CartPoleContinuous };

std::string_view to_string(EnvKind kind);
EnvKind parse_env_kind(std::string_view name);

/// Classic cart-pole constants. The continuous variant uses the same physics with a clamped
/// scalar force as its action.
struct EnvSpec {
  EnvKind kind = EnvKind::CartPoleDiscrete;
  int max_steps = 500;
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_pole_length = 0.5;
  double force_magnitude = 10.0;
  double timestep = 0.02;
  double x_threshold = 2.4;
  double angle_threshold = 12.0 * 2.0 * std::numbers::pi / 360.0;
};

struct StepResult {
  VectorXd next_state;
  double reward = 0.0;
  bool done = false;
};

struct Transition {
  VectorXd state;
  Action action;
  double reward = 0.0;
  VectorXd next_state;
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> steps;

  std::size_t length() const { return steps.size(); }
  double undiscounted_return() const;
};

/// sum_t gamma^t r_t.
double discounted_return(const Trajectory& traj, double gamma);

/// Anything the trajectory collector can drive: an initial-state sampler, a pure transition
/// function and a horizon.
template <typename E>
concept Environment = requires(const E& env, Rng& rng, const VectorXd& state, const Action& action) {
  { env.reset(rng) } -> std::convertible_to<VectorXd>;
  { env.step(state, action) } -> std::same_as<StepResult>;
  { env.max_steps() } -> std::convertible_to<int>;
  { env.state_dim() } -> std::convertible_to<Index>;
};

class CartPole {
 public:
  CartPole() = default;
  explicit CartPole(EnvSpec spec) : spec_(spec) {}

  const EnvSpec& spec() const { return spec_; }
  int max_steps() const { return spec_.max_steps; }
  Index state_dim() const { return 4; }
  /// Categorical width (2) for the discrete variant, action dimension (1) for the continuous one.
  Index action_width() const { return spec_.kind == EnvKind::CartPoleDiscrete ? 2 : 1; }
  HeadKind head_kind() const {
    return spec_.kind == EnvKind::CartPoleDiscrete ? HeadKind::Categorical : HeadKind::Gaussian;
  }

  /// Each component uniform in [-0.05, 0.05].
  VectorXd reset(Rng& rng) const;
  /// One semi-implicit Euler step; `done` when a position or angle threshold is crossed.
  StepResult step(const VectorXd& state, const Action& action) const;
  bool out_of_bounds(const VectorXd& state) const;

 private:
  EnvSpec spec_;
};

static_assert(Environment<CartPole>);

/// Shared distillation inputs, one state per row.
struct PublicStateSet {
  MatrixXd states;
  bool generated = false;

  Index size() const { return states.rows(); }
};

/// Text format: "# fedhpd-states v1 dim=<d> n=<n>" then one row of 17-significant-digit values
/// per state, comma separated.
void write_states(std::ostream& out, const PublicStateSet& set);
PublicStateSet read_states(std::istream& in);
void save_states(const std::filesystem::path& path, const PublicStateSet& set);
PublicStateSet load_states(const std::filesystem::path& path);

}  // namespace fedhpd

#include "fedhpd/env.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace fedhpd {

std::string_view to_string(EnvKind kind) {
  return kind == EnvKind::CartPoleDiscrete ? "cartpole-discrete" : "cartpole-continuous";
}

EnvKind parse_env_kind(std::string_view name) {
  if (name == "cartpole-discrete" || name == "cartpole") return EnvKind::CartPoleDiscrete;
  if (name == "cartpole-continuous") return EnvKind::CartPoleContinuous;
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

double Trajectory::undiscounted_return() const {
  double total = 0.0;
  for (const auto& t : steps) total += t.reward;
  return total;
}

double discounted_return(const Trajectory& traj, double gamma) {
  double total = 0.0;
  double weight = 1.0;
  for (const auto& t : traj.steps) {
    total += weight * t.reward;
    weight *= gamma;
  }
  return total;
}

VectorXd CartPole::reset(Rng& rng) const {
  std::uniform_real_distribution<double> uniform(-0.05, 0.05);
  VectorXd s(4);
  for (Index i = 0; i < 4; ++i) s(i) = uniform(rng);
  return s;
}

bool CartPole::out_of_bounds(const VectorXd& s) const {
  return s(0) < -spec_.x_threshold || s(0) > spec_.x_threshold || s(2) < -spec_.angle_threshold ||
         s(2) > spec_.angle_threshold;
}

StepResult CartPole::step(const VectorXd& state, const Action& action) const {
  if (state.size() != 4) throw ConfigError("cart-pole state must have 4 components");
  if (!state.allFinite()) throw NumericError("cart-pole: non-finite state");

  double force = 0.0;
  if (spec_.kind == EnvKind::CartPoleDiscrete) {
    if (action.index != 0 && action.index != 1) throw ConfigError("cart-pole: discrete action must be 0 or 1");
    force = action.index == 1 ? spec_.force_magnitude : -spec_.force_magnitude;
  } else {
    if (action.value.size() != 1) throw ConfigError("cart-pole: continuous action must be a scalar");
    if (!std::isfinite(action.value(0))) throw NumericError("cart-pole: non-finite action");
    force = std::clamp(action.value(0), -spec_.force_magnitude, spec_.force_magnitude);
  }

  const double x = state(0), x_dot = state(1), theta = state(2), theta_dot = state(3);
  const double total_mass = spec_.cart_mass + spec_.pole_mass;
  const double polemass_length = spec_.pole_mass * spec_.half_pole_length;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);

  const double temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (spec_.gravity * sin_t - cos_t * temp) /
                           (spec_.half_pole_length * (4.0 / 3.0 - spec_.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

  StepResult r;
  r.next_state.resize(4);
  const double new_x_dot = x_dot + spec_.timestep * x_acc;
  const double new_theta_dot = theta_dot + spec_.timestep * theta_acc;
  r.next_state << x + spec_.timestep * new_x_dot, new_x_dot, theta + spec_.timestep * new_theta_dot,
      new_theta_dot;
  r.done = out_of_bounds(r.next_state);
  r.reward = 1.0;
  return r;
}

void write_states(std::ostream& out, const PublicStateSet& set) {
  out << "# fedhpd-states v1 dim=" << set.states.cols() << " n=" << set.states.rows() << "\n";
  char buf[64];
  for (Index r = 0; r < set.states.rows(); ++r) {
    for (Index c = 0; c < set.states.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", set.states(r, c));
      if (c > 0) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing state set");
}

PublicStateSet read_states(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw IoError("state set: empty input");
  long dim = 0, n = 0;
  if (std::sscanf(header.c_str(), "# fedhpd-states v1 dim=%ld n=%ld", &dim, &n) != 2 || dim <= 0 || n <= 0)
    throw IoError("state set: malformed header '" + header + "'");

  PublicStateSet set;
  set.states.resize(n, dim);
  std::string line;
  for (long r = 0; r < n; ++r) {
    if (!std::getline(in, line)) throw IoError("state set: expected " + std::to_string(n) + " rows");
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (long c = 0; c < dim; ++c) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw IoError("state set: bad number on row " + std::to_string(r));
      set.states(r, c) = v;
      p = next;
      if (c + 1 < dim) {
        if (p == end || *p != ',') throw IoError("state set: expected ',' on row " + std::to_string(r));
        ++p;
      }
    }
    if (p != end && *p != '\r') throw IoError("state set: trailing data on row " + std::to_string(r));
  }
  return set;
}

void save_states(const std::filesystem::path& path, const PublicStateSet& set) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_states(out, set);
}

PublicStateSet load_states(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_states(in);
}

}  // namespace fedhpd

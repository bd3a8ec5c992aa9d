#include "fedhpd/policy.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "fedhpd/binary_io.hpp"

namespace fedhpd {

namespace {

void require_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite network output");
}

MatrixXd as_columns(const VectorXd& state) { return state; }

VectorXd variance_from_log_std(const VectorXd& log_std) { return (2.0 * log_std.array()).exp(); }

}  // namespace

std::string_view to_string(HeadKind kind) {
  return kind == HeadKind::Categorical ? "categorical" : "gaussian";
}

Policy Policy::categorical(Mlp<double> net) {
  if (net.output_dim() < 2) throw ConfigError("categorical policy needs at least two actions");
  Policy p;
  p.kind_ = HeadKind::Categorical;
  p.net_ = std::move(net);
  return p;
}

Policy Policy::gaussian(Mlp<double> net, VectorXd log_std) {
  if (log_std.size() != net.output_dim())
    throw ConfigError("gaussian policy: log_std length must equal the action dimension");
  Policy p;
  p.kind_ = HeadKind::Gaussian;
  p.net_ = std::move(net);
  p.log_std_ = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  return p;
}

VectorXd Policy::params() const {
  VectorXd p(param_count());
  p << net_.params(), log_std_;
  return p;
}

void Policy::set_params(const VectorXd& p) {
  if (p.size() != param_count()) throw ConfigError("policy parameter vector length mismatch");
  net_.set_params(p.head(net_.param_count()));
  if (log_std_.size() > 0)
    log_std_ = p.tail(log_std_.size()).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

std::size_t DistributionBatch::encoded_size() const {
  const std::size_t cells = static_cast<std::size_t>(n_states() * width());
  const std::size_t payload = kind == HeadKind::Categorical ? cells : 2 * cells;
  return sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t) + payload * sizeof(double);
}

bool DistributionBatch::operator==(const DistributionBatch& other) const {
  if (kind != other.kind) return false;
  if (kind == HeadKind::Categorical)
    return probs.rows() == other.probs.rows() && probs.cols() == other.probs.cols() && probs == other.probs;
  return mean.rows() == other.mean.rows() && mean.cols() == other.mean.cols() && mean == other.mean &&
         variance == other.variance;
}

MatrixXd softmax_columns(const MatrixXd& logits) {
  MatrixXd out(logits.rows(), logits.cols());
  for (Index c = 0; c < logits.cols(); ++c) out.col(c) = softmax(logits.col(c));
  return out;
}

StateDistribution action_distribution(const Policy& policy, const VectorXd& state) {
  if (state.size() != policy.state_dim()) throw ConfigError("action_distribution: state dimension mismatch");
  const MatrixXd out = forward(policy.net(), as_columns(state));
  require_finite(out, "action_distribution");
  StateDistribution d;
  if (policy.kind() == HeadKind::Categorical) {
    d.probs = softmax(out.col(0));
  } else {
    d.mean = out.col(0);
    d.variance = variance_from_log_std(policy.log_std());
  }
  return d;
}

Action sample_action(const Policy& policy, const VectorXd& state, Rng& rng) {
  const StateDistribution d = action_distribution(policy, state);
  if (policy.kind() == HeadKind::Categorical) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double u = uniform(rng);
    double cumulative = 0.0;
    const int last = static_cast<int>(d.probs.size()) - 1;
    for (int i = 0; i < last; ++i) {
      cumulative += d.probs(i);
      if (u < cumulative) return Action::discrete(i);
    }
    return Action::discrete(last);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd a(d.mean.size());
  for (Index i = 0; i < a.size(); ++i) a(i) = d.mean(i) + std::exp(policy.log_std()(i)) * normal(rng);
  return Action::continuous(std::move(a));
}

double log_prob(const Policy& policy, const VectorXd& state, const Action& action) {
  if (state.size() != policy.state_dim()) throw ConfigError("log_prob: state dimension mismatch");
  const MatrixXd out = forward(policy.net(), as_columns(state));
  require_finite(out, "log_prob");
  if (policy.kind() == HeadKind::Categorical) {
    const double m = out.maxCoeff();
    return out(action.index, 0) - m - std::log((out.array() - m).exp().sum());
  }
  double lp = 0.0;
  for (Index i = 0; i < out.rows(); ++i) {
    const double ls = policy.log_std()(i);
    const double diff = action.value(i) - out(i, 0);
    lp += -0.5 * std::log(2.0 * std::numbers::pi) - ls - 0.5 * diff * diff / std::exp(2.0 * ls);
  }
  return lp;
}

VectorXd weighted_score(const Policy& policy, const MatrixXd& states, std::span<const Action> actions,
                        std::span<const double> weights) {
  const Index n = states.rows();
  if (static_cast<Index>(actions.size()) != n || static_cast<Index>(weights.size()) != n)
    throw ConfigError("weighted_score: states, actions and weights differ in length");
  ForwardCache<double> cache;
  const MatrixXd out = forward(policy.net(), states.transpose(), &cache);
  require_finite(out, "weighted_score");

  MatrixXd seed(out.rows(), n);
  VectorXd log_std_grad = VectorXd::Zero(policy.log_std().size());
  if (policy.kind() == HeadKind::Categorical) {
    const MatrixXd probs = softmax_columns(out);
    for (Index t = 0; t < n; ++t) {
      const int a = actions[t].index;
      if (a < 0 || a >= out.rows()) throw ConfigError("weighted_score: action index out of range");
      seed.col(t) = -weights[t] * probs.col(t);
      seed(a, t) += weights[t];
    }
  } else {
    const VectorXd var = variance_from_log_std(policy.log_std());
    for (Index t = 0; t < n; ++t) {
      if (actions[t].value.size() != out.rows()) throw ConfigError("weighted_score: action dimension mismatch");
      const VectorXd z = (actions[t].value - out.col(t)).array() / var.array();
      seed.col(t) = weights[t] * z;
      log_std_grad.array() += weights[t] * ((actions[t].value - out.col(t)).array() * z.array() - 1.0);
    }
  }
  VectorXd grad(policy.param_count());
  grad << backward(policy.net(), cache, seed), log_std_grad;
  if (!grad.allFinite()) throw NumericError("weighted_score: non-finite gradient");
  return grad;
}

VectorXd log_prob_grad(const Policy& policy, const VectorXd& state, const Action& action) {
  const MatrixXd states = state.transpose();
  const double one = 1.0;
  return weighted_score(policy, states, std::span<const Action>(&action, 1), std::span<const double>(&one, 1));
}

DistributionBatch extract_batch(const Policy& policy, const MatrixXd& states) {
  if (states.cols() != policy.state_dim()) throw ConfigError("extract_batch: state dimension mismatch");
  const MatrixXd out = forward(policy.net(), states.transpose());
  require_finite(out, "extract_batch");
  DistributionBatch batch;
  batch.kind = policy.kind();
  if (policy.kind() == HeadKind::Categorical) {
    batch.probs = softmax_columns(out).transpose();
  } else {
    batch.mean = out.transpose();
    const VectorXd var = variance_from_log_std(policy.log_std());
    batch.variance = var.transpose().replicate(states.rows(), 1);
  }
  return batch;
}

KlLoss kl_batch_loss(const Policy& policy, const MatrixXd& states, const DistributionBatch& consensus) {
  if (consensus.kind != policy.kind()) throw ConfigError("kl_batch_loss: consensus kind does not match policy");
  if (consensus.n_states() != states.rows() || consensus.width() != policy.action_width())
    throw ConfigError("kl_batch_loss: consensus shape does not match the public state set");
  if (states.cols() != policy.state_dim()) throw ConfigError("kl_batch_loss: state dimension mismatch");

  const Index n = states.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  ForwardCache<double> cache;
  const MatrixXd out = forward(policy.net(), states.transpose(), &cache);
  require_finite(out, "kl_batch_loss");

  KlLoss result;
  MatrixXd seed(out.rows(), n);
  VectorXd log_std_grad = VectorXd::Zero(policy.log_std().size());

  if (policy.kind() == HeadKind::Categorical) {
    const MatrixXd probs = softmax_columns(out);
    for (Index s = 0; s < n; ++s) {
      // d/dz_j sum_a p_a (ln p_a - ln q_a) = p_j (l_j - KL)
      const VectorXd p = probs.col(s);
      const VectorXd q = consensus.probs.row(s).transpose();
      const VectorXd l = p.cwiseMax(kProbabilityFloor).array().log() - q.cwiseMax(kProbabilityFloor).array().log();
      const double kl = p.dot(l);
      result.loss += kl;
      seed.col(s) = inv_n * (p.array() * (l.array() - kl)).matrix();
    }
  } else {
    const VectorXd var = variance_from_log_std(policy.log_std());
    for (Index s = 0; s < n; ++s) {
      const VectorXd mu2 = consensus.mean.row(s).transpose();
      const VectorXd var2 = consensus.variance.row(s).transpose();
      result.loss += kl_gaussian(out.col(s), var, mu2, var2);
      seed.col(s) = inv_n * ((out.col(s) - mu2).array() / var2.array()).matrix();
      log_std_grad.array() += inv_n * (var.array() / var2.array() - 1.0);
    }
  }
  result.loss *= inv_n;
  result.grad.resize(policy.param_count());
  result.grad << backward(policy.net(), cache, seed), log_std_grad;
  if (!result.grad.allFinite() || !std::isfinite(result.loss))
    throw NumericError("kl_batch_loss: non-finite loss or gradient");
  return result;
}

void write_batch(std::ostream& out, const DistributionBatch& batch) {
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(batch.kind));
  binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(batch.n_states()));
  binary::write<std::uint64_t>(out, static_cast<std::uint64_t>(batch.width()));
  auto rows = [&](const MatrixXd& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) binary::write<double>(out, m(r, c));
  };
  if (batch.kind == HeadKind::Categorical) {
    rows(batch.probs);
  } else {
    rows(batch.mean);
    rows(batch.variance);
  }
}

DistributionBatch read_batch(std::istream& in) {
  DistributionBatch batch;
  const auto kind = binary::read<std::uint32_t>(in, "batch kind");
  if (kind != static_cast<std::uint32_t>(HeadKind::Categorical) &&
      kind != static_cast<std::uint32_t>(HeadKind::Gaussian))
    throw IoError("distribution batch: unknown kind tag " + std::to_string(kind));
  batch.kind = static_cast<HeadKind>(kind);
  const auto n = static_cast<Index>(binary::read<std::uint64_t>(in, "batch n_states"));
  const auto w = static_cast<Index>(binary::read<std::uint64_t>(in, "batch width"));
  if (n <= 0 || w <= 0 || n > (Index(1) << 28) || w > (Index(1) << 16))
    throw IoError("distribution batch: implausible shape");
  auto rows = [&](MatrixXd& m) {
    m.resize(n, w);
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < w; ++c) m(r, c) = binary::read<double>(in, "batch payload");
  };
  if (batch.kind == HeadKind::Categorical) {
    rows(batch.probs);
  } else {
    rows(batch.mean);
    rows(batch.variance);
  }
  return batch;
}

std::vector<unsigned char> encode_batch(const DistributionBatch& batch) {
  std::ostringstream out(std::ios::binary);
  write_batch(out, batch);
  const std::string s = out.str();
  return {s.begin(), s.end()};
}

DistributionBatch decode_batch(std::span<const unsigned char> bytes) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_batch(in);
}

}  // namespace fedhpd

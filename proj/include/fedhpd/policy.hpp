#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fedhpd/nn.hpp"

namespace fedhpd {

using Rng = std::mt19937_64;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class HeadKind : std::uint32_t { Categorical = 1, Gaussian = 2 };

std::string_view to_string(HeadKind kind);

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kProbabilityFloor = 1e-12;

/// Discrete actions carry `index`; continuous actions carry `value`.
struct Action {
  int index = -1;
  VectorXd value;

  static Action discrete(int i) { return {i, {}}; }
  static Action continuous(VectorXd v) { return {-1, std::move(v)}; }
};

/// A categorical or Gaussian head over an Mlp. For Gaussian heads the network outputs the mean
/// and a state-independent log standard deviation is appended to the parameter vector.
class Policy {
 public:
  Policy() = default;

  static Policy categorical(Mlp<double> net);
  static Policy gaussian(Mlp<double> net, VectorXd log_std);

  HeadKind kind() const { return kind_; }
  const Mlp<double>& net() const { return net_; }
  const VectorXd& log_std() const { return log_std_; }

  Index state_dim() const { return net_.input_dim(); }
  /// |A| for categorical heads, action dimension for Gaussian heads.
  Index action_width() const { return net_.output_dim(); }
  Index param_count() const { return net_.param_count() + log_std_.size(); }

  /// Network parameters followed by log_std.
  VectorXd params() const;
  /// Inverse of params(); log_std is clamped to [kLogStdMin, kLogStdMax].
  void set_params(const VectorXd& p);

 private:
  HeadKind kind_ = HeadKind::Categorical;
  Mlp<double> net_;
  VectorXd log_std_;
};

/// One state's action distribution: `probs` for categorical heads, `mean`/`variance` for Gaussian.
struct StateDistribution {
  VectorXd probs;
  VectorXd mean;
  VectorXd variance;
};

/// Rows are states. Categorical batches fill `probs` (n x |A|); Gaussian batches fill `mean` and
/// `variance` (n x a_dim).
struct DistributionBatch {
  HeadKind kind = HeadKind::Categorical;
  MatrixXd probs;
  MatrixXd mean;
  MatrixXd variance;

  Index n_states() const { return kind == HeadKind::Categorical ? probs.rows() : mean.rows(); }
  Index width() const { return kind == HeadKind::Categorical ? probs.cols() : mean.cols(); }
  /// Size of the wire encoding in bytes.
  std::size_t encoded_size() const;
  bool operator==(const DistributionBatch& other) const;
};

/// Numerically stable softmax of a logit vector.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

/// Columnwise softmax of a (|A| x n) logit matrix.
MatrixXd softmax_columns(const MatrixXd& logits);

StateDistribution action_distribution(const Policy& policy, const VectorXd& state);
Action sample_action(const Policy& policy, const VectorXd& state, Rng& rng);
double log_prob(const Policy& policy, const VectorXd& state, const Action& action);
VectorXd log_prob_grad(const Policy& policy, const VectorXd& state, const Action& action);

/// Sum over t of weights[t] * grad log pi(actions[t] | states.row(t)), in one batched pass.
VectorXd weighted_score(const Policy& policy, const MatrixXd& states, std::span<const Action> actions,
                        std::span<const double> weights);

/// Evaluates the policy on every row of `states` (n x state_dim).
DistributionBatch extract_batch(const Policy& policy, const MatrixXd& states);

/// sum_i p_i ln(p_i / q_i) with 0 ln 0 = 0. Both arguments of the logarithm are floored at
/// kProbabilityFloor, so p == q gives exactly zero.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_categorical(const Eigen::MatrixBase<DerivedP>& p,
                                         const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.size() != q.size()) throw ConfigError("kl_categorical: length mismatch");
  Scalar sum = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const Scalar pi = p(i);
    if (pi <= Scalar(0)) continue;
    sum += pi * (std::log(std::max(pi, Scalar(kProbabilityFloor))) -
                 std::log(std::max(Scalar(q(i)), Scalar(kProbabilityFloor))));
  }
  return std::max(sum, Scalar(0));
}

/// Closed-form KL(N(mu1, var1) || N(mu2, var2)) for one dimension.
template <typename Scalar>
Scalar kl_gaussian(Scalar mu1, Scalar var1, Scalar mu2, Scalar var2) {
  if (!(var1 > Scalar(0)) || !(var2 > Scalar(0)))
    throw ConfigError("kl_gaussian: variances must be positive");
  const Scalar diff = mu2 - mu1;
  const Scalar kl = Scalar(0.5) * (var1 / var2 + diff * diff / var2 - Scalar(1) + std::log(var2) - std::log(var1));
  return std::max(kl, Scalar(0));
}

/// Sum over independent dimensions.
template <typename D1, typename D2, typename D3, typename D4>
typename D1::Scalar kl_gaussian(const Eigen::MatrixBase<D1>& mu1, const Eigen::MatrixBase<D2>& var1,
                                const Eigen::MatrixBase<D3>& mu2, const Eigen::MatrixBase<D4>& var2) {
  if (mu1.size() != var1.size() || mu1.size() != mu2.size() || mu1.size() != var2.size())
    throw ConfigError("kl_gaussian: dimension mismatch");
  typename D1::Scalar sum = 0;
  for (Index i = 0; i < mu1.size(); ++i) sum += kl_gaussian(mu1(i), var1(i), mu2(i), var2(i));
  return sum;
}

struct KlLoss {
  double loss = 0.0;
  VectorXd grad;
};

/// Mean over states of KL(policy || consensus) and its gradient; the consensus is a constant.
KlLoss kl_batch_loss(const Policy& policy, const MatrixXd& states, const DistributionBatch& consensus);

/// Binary wire format: u32 kind, u64 n_states, u64 width, then f64 little-endian rows
/// (categorical: probabilities; Gaussian: all means then all variances).
void write_batch(std::ostream& out, const DistributionBatch& batch);
DistributionBatch read_batch(std::istream& in);
std::vector<unsigned char> encode_batch(const DistributionBatch& batch);
DistributionBatch decode_batch(std::span<const unsigned char> bytes);

}  // namespace fedhpd

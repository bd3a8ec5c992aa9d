#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fedhpd/error.hpp"

namespace fedhpd {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMajorMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat parameter vector: per layer, weights row-major (output x input) then biases.
template <typename Scalar>
using ParamVector = VectorX<Scalar>;

enum class Activation : std::uint32_t { Relu = 0, Tanh = 1, Identity = 2 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity" || name == "linear") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

struct LayerSpec {
  Index input_dim = 0;
  Index output_dim = 0;
  Activation activation = Activation::Identity;

  Index param_count() const { return input_dim * output_dim + output_dim; }
  bool operator==(const LayerSpec&) const = default;
};

/// Applies the activation elementwise to a pre-activation array.
template <typename Derived>
auto activate(Activation a, const Eigen::ArrayBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  using Result = Eigen::Array<Scalar, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
  switch (a) {
    case Activation::Relu: return Result(z.max(Scalar(0)));
    case Activation::Tanh: return Result(z.tanh());
    case Activation::Identity: break;
  }
  return Result(z);
}

/// Derivative of the activation evaluated from the pre-activation. ReLU'(0) = 0.
template <typename Derived>
auto activation_derivative(Activation a, const Eigen::ArrayBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  using Result = Eigen::Array<Scalar, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
  switch (a) {
    case Activation::Relu: return Result((z > Scalar(0)).template cast<Scalar>());
    case Activation::Tanh: return Result(Scalar(1) - z.tanh().square());
    case Activation::Identity: break;
  }
  return Result(Result::Ones(z.rows(), z.cols()));
}

/// Dense feed-forward network over a single flat parameter vector.
template <typename Scalar>
class Mlp {
 public:
  using WeightMap = Eigen::Map<const RowMajorMatrixX<Scalar>>;
  using BiasMap = Eigen::Map<const VectorX<Scalar>>;

  Mlp() = default;

  explicit Mlp(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigError("network needs at least one layer");
    Index total = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.input_dim <= 0 || l.output_dim <= 0)
        throw ConfigError("layer " + std::to_string(i) + " has a non-positive dimension");
      if (i > 0 && layers_[i - 1].output_dim != l.input_dim)
        throw ConfigError("layer " + std::to_string(i) + " input does not match previous output");
      offsets_.push_back(total);
      total += l.param_count();
    }
    params_ = ParamVector<Scalar>::Zero(total);
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  Index input_dim() const { return layers_.front().input_dim; }
  Index output_dim() const { return layers_.back().output_dim; }
  Index param_count() const { return params_.size(); }

  const ParamVector<Scalar>& params() const { return params_; }

  void set_params(const ParamVector<Scalar>& p) {
    if (p.size() != params_.size()) throw ConfigError("parameter vector length mismatch");
    params_ = p;
  }

  WeightMap weights(std::size_t layer) const {
    const auto& l = layers_[layer];
    return WeightMap(params_.data() + offsets_[layer], l.output_dim, l.input_dim);
  }

  BiasMap bias(std::size_t layer) const {
    const auto& l = layers_[layer];
    return BiasMap(params_.data() + offsets_[layer] + l.input_dim * l.output_dim, l.output_dim);
  }

  Index offset(std::size_t layer) const { return offsets_[layer]; }

  /// Glorot-uniform weights, zero biases.
  template <typename Rng>
  void init_glorot(Rng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const Scalar limit = std::sqrt(Scalar(6) / Scalar(l.input_dim + l.output_dim));
      std::uniform_real_distribution<Scalar> dist(-limit, limit);
      Scalar* w = params_.data() + offsets_[i];
      for (Index k = 0; k < l.input_dim * l.output_dim; ++k) w[k] = dist(rng);
      for (Index k = 0; k < l.output_dim; ++k) w[l.input_dim * l.output_dim + k] = Scalar(0);
    }
  }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<Index> offsets_;
  ParamVector<Scalar> params_;
};

/// Hidden layers with the given widths/activations followed by an identity output layer.
template <typename Scalar = double>
Mlp<Scalar> make_mlp(Index input_dim, const std::vector<Index>& hidden,
                     const std::vector<Activation>& activations, Index output_dim) {
  if (hidden.size() != activations.size())
    throw ConfigError("hidden widths and activations differ in length");
  std::vector<LayerSpec> layers;
  Index in = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.push_back({in, hidden[i], activations[i]});
    in = hidden[i];
  }
  layers.push_back({in, output_dim, Activation::Identity});
  return Mlp<Scalar>(std::move(layers));
}

/// Per-layer inputs and pre-activations recorded by forward; columns are samples.
template <typename Scalar>
struct ForwardCache {
  std::vector<MatrixX<Scalar>> inputs;
  std::vector<MatrixX<Scalar>> preactivations;
};

/// Batched forward pass: `input` is (input_dim x batch).
template <typename Scalar, typename Derived>
MatrixX<Scalar> forward(const Mlp<Scalar>& net, const Eigen::MatrixBase<Derived>& input,
                        ForwardCache<Scalar>* cache = nullptr) {
  if (input.rows() != net.input_dim())
    throw ConfigError("forward: input has " + std::to_string(input.rows()) + " rows, network expects " +
                      std::to_string(net.input_dim()));
  if (cache) {
    cache->inputs.clear();
    cache->preactivations.clear();
  }
  MatrixX<Scalar> x = input;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    MatrixX<Scalar> z = net.weights(i) * x;
    z.colwise() += net.bias(i);
    MatrixX<Scalar> y = activate(net.layers()[i].activation, z.array()).matrix();
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preactivations.push_back(std::move(z));
    }
    x = std::move(y);
  }
  return x;
}

template <typename Scalar>
VectorX<Scalar> forward(const Mlp<Scalar>& net, const VectorX<Scalar>& input) {
  return forward(net, input, static_cast<ForwardCache<Scalar>*>(nullptr)).col(0);
}

/// Gradient of a loss w.r.t. parameters given d(loss)/d(output), summed over the batch columns.
template <typename Scalar, typename Derived>
ParamVector<Scalar> backward(const Mlp<Scalar>& net, const ForwardCache<Scalar>& cache,
                             const Eigen::MatrixBase<Derived>& output_grad) {
  const auto& layers = net.layers();
  if (cache.inputs.size() != layers.size())
    throw ConfigError("backward: cache does not belong to this network");
  if (output_grad.rows() != net.output_dim() || output_grad.cols() != cache.inputs.back().cols())
    throw ConfigError("backward: output gradient shape mismatch");

  ParamVector<Scalar> grad(net.param_count());
  MatrixX<Scalar> delta = output_grad;
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const auto& l = layers[idx];
    delta.array() *= activation_derivative(l.activation, cache.preactivations[idx].array());
    Eigen::Map<RowMajorMatrixX<Scalar>> gw(grad.data() + net.offset(idx), l.output_dim, l.input_dim);
    gw.noalias() = delta * cache.inputs[idx].transpose();
    grad.segment(net.offset(idx) + l.input_dim * l.output_dim, l.output_dim) = delta.rowwise().sum();
    if (idx > 0) delta = net.weights(idx).transpose() * delta;
  }
  return grad;
}

template <typename Scalar>
struct AdamState {
  static constexpr Scalar beta1 = Scalar(0.9);
  static constexpr Scalar beta2 = Scalar(0.999);
  static constexpr Scalar epsilon = Scalar(1e-8);

  VectorX<Scalar> m;
  VectorX<Scalar> v;
  long step_count = 0;

  AdamState() = default;
  explicit AdamState(Index n) : m(VectorX<Scalar>::Zero(n)), v(VectorX<Scalar>::Zero(n)) {}
};

/// One Adam descent step on `params` (bias-corrected). Callers negate for ascent.
template <typename Scalar, typename Derived>
void adam_step(VectorX<Scalar>& params, const Eigen::MatrixBase<Derived>& grad, AdamState<Scalar>& state,
               std::type_identity_t<Scalar> lr) {
  if (params.size() != grad.size() || state.m.size() != params.size())
    throw ConfigError("adam_step: shape mismatch");
  if (!grad.allFinite()) throw NumericError("adam_step: non-finite gradient entry");
  using S = AdamState<Scalar>;
  ++state.step_count;
  state.m = S::beta1 * state.m + (Scalar(1) - S::beta1) * grad;
  state.v = S::beta2 * state.v + (Scalar(1) - S::beta2) * grad.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(S::beta1, Scalar(state.step_count));
  const Scalar c2 = Scalar(1) - std::pow(S::beta2, Scalar(state.step_count));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + S::epsilon);
}

}  // namespace fedhpd

#pragma once

// Small dense networks with batch normalization and exact backpropagation.
//
// Batches are stored column-per-sample: an input of arity n with batch size B is an
// n x B matrix. A network is a set of input branches (each a possibly empty chain of
// layers) whose outputs are stacked and fed through a trunk of layers. Each layer is
//   z = W x + b,  y = BN(z) (optional),  out = act(y)
// and the final trunk output is multiplied by `output_scale`.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedplatoon/errors.hpp"

namespace fedplatoon::nn {

using Index = Eigen::Index;

enum class Activation { kRelu, kTanh, kLinear };
enum class Mode { kTrain, kEval };

struct LayerSpec {
  Index fan_in = 0;
  Index fan_out = 0;
  Activation activation = Activation::kLinear;
  bool batch_norm = false;
};

struct NetworkSpec {
  std::vector<Index> input_sizes;
  std::vector<std::vector<LayerSpec>> branches;  // one per input; empty = pass-through
  std::vector<LayerSpec> trunk;                  // trunk.back() is the output layer
  double output_scale = 1.0;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;

  Index branch_output(std::size_t b) const {
    return branches[b].empty() ? input_sizes[b] : branches[b].back().fan_out;
  }

  Index concat_size() const {
    Index n = 0;
    for (std::size_t b = 0; b < branches.size(); ++b) n += branch_output(b);
    return n;
  }

  Index output_size() const { return trunk.back().fan_out; }

  std::size_t layer_count() const {
    std::size_t n = trunk.size();
    for (const auto& br : branches) n += br.size();
    return n;
  }

  // Flattened layer order: branch 0, branch 1, ..., trunk.
  std::vector<LayerSpec> layers() const {
    std::vector<LayerSpec> out;
    for (const auto& br : branches) out.insert(out.end(), br.begin(), br.end());
    out.insert(out.end(), trunk.begin(), trunk.end());
    return out;
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> out;
    for (std::size_t b = 0; b < branches.size(); ++b) {
      for (std::size_t j = 0; j < branches[b].size(); ++j) {
        out.push_back("branch" + std::to_string(b) + "." + std::to_string(j));
      }
    }
    for (std::size_t j = 0; j < trunk.size(); ++j) out.push_back("trunk." + std::to_string(j));
    return out;
  }

  void validate() const {
    if (input_sizes.empty()) throw ShapeError("network needs at least one input");
    if (branches.size() != input_sizes.size()) throw ShapeError("one branch per input is required");
    if (trunk.empty()) throw ShapeError("network needs an output layer");
    auto check_chain = [](const std::vector<LayerSpec>& chain, Index in, const char* where) {
      for (const auto& l : chain) {
        if (l.fan_in != in || l.fan_out < 1) {
          throw ShapeError(std::string(where) + ": adjacent layer arities do not match");
        }
        in = l.fan_out;
      }
      return in;
    };
    for (std::size_t b = 0; b < branches.size(); ++b) {
      if (input_sizes[b] < 1) throw ShapeError("input arity must be positive");
      check_chain(branches[b], input_sizes[b], "branch");
    }
    check_chain(trunk, concat_size(), "trunk");
    if (!(output_scale > 0.0)) throw InvalidParameter("output_scale must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw InvalidParameter("bn_momentum must be in [0, 1)");
    if (!(bn_epsilon > 0.0)) throw InvalidParameter("bn_epsilon must be positive");
  }
};

// state -> hidden (BN, relu) ... -> 1 tanh, scaled by u_max
inline NetworkSpec actor_spec(Index state_dim, std::vector<Index> hidden, double u_max) {
  NetworkSpec s;
  s.input_sizes = {state_dim};
  s.branches = {{}};
  Index in = state_dim;
  for (Index h : hidden) {
    s.trunk.push_back({in, h, Activation::kRelu, true});
    in = h;
  }
  s.trunk.push_back({in, 1, Activation::kTanh, false});
  s.output_scale = u_max;
  return s;
}

// (state -> state_hidden, action -> action_hidden) -> concat -> hidden -> 1 linear
inline NetworkSpec critic_spec(Index state_dim, Index action_dim, Index state_hidden, Index action_hidden,
                               std::vector<Index> hidden) {
  NetworkSpec s;
  s.input_sizes = {state_dim, action_dim};
  s.branches = {{{state_dim, state_hidden, Activation::kRelu, true}},
                {{action_dim, action_hidden, Activation::kRelu, true}}};
  Index in = state_hidden + action_hidden;
  for (Index h : hidden) {
    s.trunk.push_back({in, h, Activation::kRelu, true});
    in = h;
  }
  s.trunk.push_back({in, 1, Activation::kLinear, false});
  return s;
}

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct LayerParams {
  MatrixT<Scalar> weight;  // fan_out x fan_in
  VectorT<Scalar> bias;
  // Batch-norm tensors; empty when the layer has no normalization.
  VectorT<Scalar> gain;
  VectorT<Scalar> shift;
  VectorT<Scalar> running_mean;
  VectorT<Scalar> running_var;

  bool has_batch_norm() const { return gain.size() != 0; }
};

template <typename Scalar>
struct NetworkParams {
  std::vector<LayerParams<Scalar>> layers;
};

template <typename Scalar>
struct LayerGradients {
  MatrixT<Scalar> weight;
  VectorT<Scalar> bias;
  VectorT<Scalar> gain;
  VectorT<Scalar> shift;
};

template <typename Scalar>
struct Gradients {
  std::vector<LayerGradients<Scalar>> layers;
};

// Calls f(name, tensor) for every tensor of a layer, running statistics included.
template <typename Layer, typename F>
void for_each_tensor(Layer& layer, F&& f) {
  f("weight", layer.weight);
  f("bias", layer.bias);
  if (layer.gain.size() != 0) {
    f("bn.gain", layer.gain);
    f("bn.shift", layer.shift);
    f("bn.running_mean", layer.running_mean);
    f("bn.running_var", layer.running_var);
  }
}

template <typename Layer, typename F>
void for_each_trainable(Layer& layer, F&& f) {
  f("weight", layer.weight);
  f("bias", layer.bias);
  if (layer.gain.size() != 0) {
    f("bn.gain", layer.gain);
    f("bn.shift", layer.shift);
  }
}

// Hidden layers draw weights and biases from U[-1/sqrt(fan_in), 1/sqrt(fan_in)];
// the output layer from U[-3e-3, 3e-3].
inline constexpr double kOutputInitBound = 3e-3;

template <typename Scalar, typename Rng>
NetworkParams<Scalar> init_network(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  const auto specs = spec.layers();
  NetworkParams<Scalar> params;
  params.layers.resize(specs.size());
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerSpec& s = specs[l];
    const bool is_output = l + 1 == specs.size();
    const Scalar bound = is_output ? Scalar(kOutputInitBound) : Scalar(1) / std::sqrt(Scalar(s.fan_in));
    std::uniform_real_distribution<Scalar> uniform(-bound, bound);
    LayerParams<Scalar>& p = params.layers[l];
    p.weight = MatrixT<Scalar>::NullaryExpr(s.fan_out, s.fan_in, [&]() { return uniform(rng); });
    p.bias = VectorT<Scalar>::NullaryExpr(s.fan_out, [&]() { return uniform(rng); });
    if (s.batch_norm) {
      p.gain = VectorT<Scalar>::Ones(s.fan_out);
      p.shift = VectorT<Scalar>::Zero(s.fan_out);
      p.running_mean = VectorT<Scalar>::Zero(s.fan_out);
      p.running_var = VectorT<Scalar>::Ones(s.fan_out);
    }
  }
  return params;
}

template <typename Scalar>
struct LayerCache {
  MatrixT<Scalar> input;
  MatrixT<Scalar> normalized;      // x_hat, BN layers only
  VectorT<Scalar> inv_std;         // BN layers only
  VectorT<Scalar> batch_mean;      // train mode only
  VectorT<Scalar> batch_var;       // train mode only
  MatrixT<Scalar> pre_activation;  // after BN, before the activation
  MatrixT<Scalar> output;
};

template <typename Scalar>
struct ForwardCache {
  Mode mode = Mode::kEval;
  Index batch = 0;
  std::vector<LayerCache<Scalar>> layers;
};

template <typename Scalar>
struct ForwardResult {
  MatrixT<Scalar> output;
  ForwardCache<Scalar> cache;
};

template <typename Scalar>
struct BackwardResult {
  Gradients<Scalar> params;             // empty when parameter gradients were not requested
  std::vector<MatrixT<Scalar>> inputs;  // one per network input
};

namespace detail {

template <typename Scalar>
MatrixT<Scalar> activate(const MatrixT<Scalar>& y, Activation act) {
  switch (act) {
    case Activation::kRelu: return y.cwiseMax(Scalar(0));
    case Activation::kTanh: return y.array().tanh().matrix();
    case Activation::kLinear: return y;
  }
  return y;
}

// d out / d y given the cached pre-activation and output.
template <typename Scalar>
MatrixT<Scalar> activation_backward(const MatrixT<Scalar>& grad, const LayerCache<Scalar>& c, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return (c.pre_activation.array() > Scalar(0)).select(grad, Scalar(0));
    case Activation::kTanh:
      return (grad.array() * (Scalar(1) - c.output.array().square())).matrix();
    case Activation::kLinear: return grad;
  }
  return grad;
}

template <typename Scalar>
MatrixT<Scalar> layer_forward(const LayerParams<Scalar>& p, const LayerSpec& s, const MatrixT<Scalar>& x,
                              Mode mode, Scalar bn_eps, LayerCache<Scalar>& c) {
  c.input = x;
  MatrixT<Scalar> z(p.weight.rows(), x.cols());
  z.noalias() = p.weight * x;
  z.colwise() += p.bias;
  if (s.batch_norm) {
    VectorT<Scalar> mean, var;
    if (mode == Mode::kTrain) {
      mean = z.rowwise().mean();
      z.colwise() -= mean;
      var = z.array().square().rowwise().mean().matrix();
      c.batch_mean = mean;
      c.batch_var = var;
    } else {
      z.colwise() -= p.running_mean;
      var = p.running_var;
    }
    c.inv_std = (var.array() + bn_eps).rsqrt().matrix();
    c.normalized = (z.array().colwise() * c.inv_std.array()).matrix();
    c.pre_activation =
        ((c.normalized.array().colwise() * p.gain.array()).colwise() + p.shift.array()).matrix();
  } else {
    c.pre_activation = std::move(z);
  }
  c.output = activate(c.pre_activation, s.activation);
  return c.output;
}

template <typename Scalar>
void check_params(const NetworkParams<Scalar>& params, const std::vector<LayerSpec>& specs) {
  if (params.layers.size() != specs.size()) throw ShapeError("parameter layer count does not match spec");
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& p = params.layers[l];
    if (p.weight.rows() != specs[l].fan_out || p.weight.cols() != specs[l].fan_in ||
        p.bias.size() != specs[l].fan_out || p.has_batch_norm() != specs[l].batch_norm) {
      throw ShapeError("parameter shapes do not match spec at layer " + std::to_string(l));
    }
  }
}

}  // namespace detail

template <typename Scalar>
ForwardResult<Scalar> forward(const NetworkParams<Scalar>& params, const NetworkSpec& spec,
                              std::span<const MatrixT<Scalar>> inputs, Mode mode) {
  const auto specs = spec.layers();
  detail::check_params(params, specs);
  if (inputs.size() != spec.input_sizes.size()) throw ShapeError("wrong number of network inputs");
  const Index batch = inputs[0].cols();
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (inputs[b].rows() != spec.input_sizes[b] || inputs[b].cols() != batch) {
      throw ShapeError("network input " + std::to_string(b) + " has the wrong shape");
    }
  }
  if (mode == Mode::kTrain && batch < 2) {
    for (const auto& s : specs) {
      if (s.batch_norm) throw InvalidBatch("train-mode batch norm needs a batch of at least 2");
    }
  }

  ForwardResult<Scalar> result;
  result.cache.mode = mode;
  result.cache.batch = batch;
  result.cache.layers.resize(specs.size());
  const Scalar eps = Scalar(spec.bn_epsilon);

  std::size_t l = 0;
  MatrixT<Scalar> concat(spec.concat_size(), batch);
  Index row = 0;
  for (std::size_t b = 0; b < spec.branches.size(); ++b) {
    MatrixT<Scalar> h = inputs[b];
    for (const auto& s : spec.branches[b]) {
      h = detail::layer_forward(params.layers[l], s, h, mode, eps, result.cache.layers[l]);
      ++l;
    }
    concat.middleRows(row, h.rows()) = h;
    row += h.rows();
  }
  MatrixT<Scalar> h = std::move(concat);
  for (const auto& s : spec.trunk) {
    h = detail::layer_forward(params.layers[l], s, h, mode, eps, result.cache.layers[l]);
    ++l;
  }
  result.output = h * Scalar(spec.output_scale);
  return result;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const NetworkParams<Scalar>& params, const NetworkSpec& spec,
                              const MatrixT<Scalar>& input, Mode mode) {
  return forward(params, spec, std::span<const MatrixT<Scalar>>(&input, 1), mode);
}

// Folds the batch statistics of a train-mode pass into the running estimates.
template <typename Scalar>
void update_running_stats(NetworkParams<Scalar>& params, const NetworkSpec& spec,
                          const ForwardCache<Scalar>& cache) {
  if (cache.mode != Mode::kTrain) return;
  if (cache.layers.size() != params.layers.size()) throw ContractError("cache does not match parameters");
  const Scalar m = Scalar(spec.bn_momentum);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    if (!p.has_batch_norm()) continue;
    const auto& c = cache.layers[l];
    p.running_mean = m * p.running_mean + (Scalar(1) - m) * c.batch_mean;
    p.running_var = m * p.running_var + (Scalar(1) - m) * c.batch_var;
  }
}

// Train-mode forward that also updates the running statistics.
template <typename Scalar>
ForwardResult<Scalar> forward_train(NetworkParams<Scalar>& params, const NetworkSpec& spec,
                                    std::span<const MatrixT<Scalar>> inputs) {
  auto result = forward(params, spec, inputs, Mode::kTrain);
  update_running_stats(params, spec, result.cache);
  return result;
}

// Gradients of sum(output .* output_gradient) with respect to every trainable tensor
// and every input. Pass want_params = false to only propagate to the inputs.
template <typename Scalar>
BackwardResult<Scalar> backward(const NetworkParams<Scalar>& params, const NetworkSpec& spec,
                                const ForwardCache<Scalar>& cache, const MatrixT<Scalar>& output_gradient,
                                bool want_params = true) {
  const auto specs = spec.layers();
  detail::check_params(params, specs);
  if (cache.layers.size() != specs.size()) throw ContractError("forward cache has the wrong layer count");
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& c = cache.layers[l];
    if (c.input.rows() != specs[l].fan_in || c.output.rows() != specs[l].fan_out || c.input.cols() != cache.batch) {
      throw ContractError("forward cache does not belong to these parameters");
    }
    if (specs[l].batch_norm && c.inv_std.size() != specs[l].fan_out) {
      throw ContractError("forward cache is missing batch-norm intermediates");
    }
  }
  if (output_gradient.rows() != spec.output_size() || output_gradient.cols() != cache.batch) {
    throw ShapeError("output gradient has the wrong shape");
  }

  BackwardResult<Scalar> result;
  if (want_params) result.params.layers.resize(specs.size());
  const Scalar batch = Scalar(cache.batch);

  auto layer_backward = [&](std::size_t l, const MatrixT<Scalar>& grad_out) -> MatrixT<Scalar> {
    const LayerSpec& s = specs[l];
    const auto& p = params.layers[l];
    const auto& c = cache.layers[l];
    MatrixT<Scalar> dy = detail::activation_backward(grad_out, c, s.activation);
    MatrixT<Scalar> dz;
    if (s.batch_norm) {
      if (want_params) {
        result.params.layers[l].gain = (dy.array() * c.normalized.array()).rowwise().sum().matrix();
        result.params.layers[l].shift = dy.rowwise().sum();
      }
      const auto dxhat = (dy.array().colwise() * p.gain.array()).eval();
      if (cache.mode == Mode::kTrain) {
        const VectorT<Scalar> sum_dxhat = dxhat.rowwise().sum().matrix();
        const VectorT<Scalar> sum_dxhat_xhat = (dxhat * c.normalized.array()).rowwise().sum().matrix();
        dz = ((batch * dxhat).colwise() - sum_dxhat.array() -
              c.normalized.array().colwise() * sum_dxhat_xhat.array())
                 .colwise() *
             (c.inv_std.array() / batch);
      } else {
        dz = (dxhat.colwise() * c.inv_std.array()).matrix();
      }
    } else {
      dz = std::move(dy);
    }
    if (want_params) {
      result.params.layers[l].weight.noalias() = dz * c.input.transpose();
      result.params.layers[l].bias = dz.rowwise().sum();
    }
    MatrixT<Scalar> dx(p.weight.cols(), dz.cols());
    dx.noalias() = p.weight.transpose() * dz;
    return dx;
  };

  MatrixT<Scalar> grad = output_gradient * Scalar(spec.output_scale);
  std::size_t l = specs.size();
  for (std::size_t j = spec.trunk.size(); j-- > 0;) {
    --l;
    grad = layer_backward(l, grad);
  }

  // grad is now the gradient of the concatenated branch outputs.
  result.inputs.resize(spec.branches.size());
  std::vector<std::size_t> branch_start(spec.branches.size());
  std::vector<Index> branch_row(spec.branches.size());
  {
    std::size_t start = 0;
    Index row = 0;
    for (std::size_t b = 0; b < spec.branches.size(); ++b) {
      branch_start[b] = start;
      branch_row[b] = row;
      start += spec.branches[b].size();
      row += spec.branch_output(b);
    }
  }
  for (std::size_t b = spec.branches.size(); b-- > 0;) {
    MatrixT<Scalar> g = grad.middleRows(branch_row[b], spec.branch_output(b));
    for (std::size_t j = spec.branches[b].size(); j-- > 0;) {
      g = layer_backward(branch_start[b] + j, g);
    }
    result.inputs[b] = std::move(g);
  }
  return result;
}

template <typename Scalar>
Gradients<Scalar> zero_gradients(const NetworkParams<Scalar>& params) {
  Gradients<Scalar> g;
  g.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    g.layers[l].weight = MatrixT<Scalar>::Zero(p.weight.rows(), p.weight.cols());
    g.layers[l].bias = VectorT<Scalar>::Zero(p.bias.size());
    g.layers[l].gain = VectorT<Scalar>::Zero(p.gain.size());
    g.layers[l].shift = VectorT<Scalar>::Zero(p.shift.size());
  }
  return g;
}

namespace detail {
template <bool TrainableOnly, typename Container>
Index flat_size(Container& c) {
  Index n = 0;
  for (auto& layer : c.layers) {
    auto add = [&](const char*, auto& t) { n += t.size(); };
    if constexpr (TrainableOnly) for_each_trainable(layer, add);
    else for_each_tensor(layer, add);
  }
  return n;
}
}  // namespace detail

// Every tensor, running statistics included, concatenated layer by layer.
template <typename Scalar>
VectorT<Scalar> flatten(const NetworkParams<Scalar>& params) {
  VectorT<Scalar> flat(detail::flat_size<false>(params));
  Index at = 0;
  for (const auto& layer : params.layers) {
    for_each_tensor(layer, [&](const char*, const auto& t) {
      flat.segment(at, t.size()) = Eigen::Map<const VectorT<Scalar>>(t.data(), t.size());
      at += t.size();
    });
  }
  return flat;
}

template <typename Scalar>
void assign_flat(NetworkParams<Scalar>& params, const VectorT<Scalar>& flat) {
  if (flat.size() != detail::flat_size<false>(params)) throw ShapeError("flat parameter vector has the wrong length");
  Index at = 0;
  for (auto& layer : params.layers) {
    for_each_tensor(layer, [&](const char*, auto& t) {
      Eigen::Map<VectorT<Scalar>>(t.data(), t.size()) = flat.segment(at, t.size());
      at += t.size();
    });
  }
}

template <typename Scalar>
VectorT<Scalar> flatten(const Gradients<Scalar>& grads) {
  VectorT<Scalar> flat(detail::flat_size<true>(grads));
  Index at = 0;
  for (const auto& layer : grads.layers) {
    for_each_trainable(layer, [&](const char*, const auto& t) {
      flat.segment(at, t.size()) = Eigen::Map<const VectorT<Scalar>>(t.data(), t.size());
      at += t.size();
    });
  }
  return flat;
}

template <typename Scalar>
void assign_flat(Gradients<Scalar>& grads, const VectorT<Scalar>& flat) {
  if (flat.size() != detail::flat_size<true>(grads)) throw ShapeError("flat gradient vector has the wrong length");
  Index at = 0;
  for (auto& layer : grads.layers) {
    for_each_trainable(layer, [&](const char*, auto& t) {
      Eigen::Map<VectorT<Scalar>>(t.data(), t.size()) = flat.segment(at, t.size());
      at += t.size();
    });
  }
}

template <typename Scalar>
bool same_shape(const NetworkParams<Scalar>& a, const NetworkParams<Scalar>& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
        x.bias.size() != y.bias.size() || x.gain.size() != y.gain.size()) {
      return false;
    }
  }
  return true;
}

// target <- mix * source + (1 - mix) * target, running statistics included.
template <typename Scalar>
void soft_update(NetworkParams<Scalar>& target, const NetworkParams<Scalar>& source, Scalar mix) {
  if (!(mix >= Scalar(0) && mix <= Scalar(1))) throw InvalidParameter("soft_update mix must be in [0, 1]");
  if (!same_shape(target, source)) throw ShapeError("soft_update: networks are not shape-congruent");
  const Scalar keep = Scalar(1) - mix;
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    auto& t = target.layers[l];
    const auto& s = source.layers[l];
    t.weight = mix * s.weight + keep * t.weight;
    t.bias = mix * s.bias + keep * t.bias;
    if (t.has_batch_norm()) {
      t.gain = mix * s.gain + keep * t.gain;
      t.shift = mix * s.shift + keep * t.shift;
      t.running_mean = mix * s.running_mean + keep * t.running_mean;
      t.running_var = mix * s.running_var + keep * t.running_var;
    }
  }
}

}  // namespace fedplatoon::nn

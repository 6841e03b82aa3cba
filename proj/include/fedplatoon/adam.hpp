#pragma once

#include <cmath>
#include <cstdint>

#include "fedplatoon/dense_net.hpp"

namespace fedplatoon::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidParameter("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw InvalidParameter("moment decay rates must be in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw InvalidParameter("optimizer epsilon must be positive");
  }
};

template <typename Scalar>
struct OptimizerState {
  AdamConfig config;
  Gradients<Scalar> first_moment;
  Gradients<Scalar> second_moment;
  std::int64_t step = 0;
};

template <typename Scalar>
OptimizerState<Scalar> make_optimizer_state(const NetworkParams<Scalar>& params, const AdamConfig& config) {
  config.validate();
  return {config, zero_gradients(params), zero_gradients(params), 0};
}

// Bias-corrected adaptive-moment step:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   w <- w - lr * m_hat / (sqrt(v_hat) + eps)
template <typename Scalar>
void optimizer_step(OptimizerState<Scalar>& state, NetworkParams<Scalar>& params, const Gradients<Scalar>& grads) {
  if (grads.layers.size() != params.layers.size() || state.first_moment.layers.size() != params.layers.size()) {
    throw ShapeError("optimizer_step: gradient and parameter layer counts differ");
  }
  state.step += 1;
  const Scalar b1 = Scalar(state.config.beta1);
  const Scalar b2 = Scalar(state.config.beta2);
  const Scalar lr = Scalar(state.config.learning_rate);
  const Scalar eps = Scalar(state.config.epsilon);
  const Scalar correction1 = Scalar(1) - std::pow(b1, Scalar(state.step));
  const Scalar correction2 = Scalar(1) - std::pow(b2, Scalar(state.step));

  auto update = [&](auto& w, auto& m, auto& v, const auto& g) {
    if (w.size() != g.size() || m.size() != g.size()) throw ShapeError("optimizer_step: tensor shapes differ");
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    w.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    auto& m = state.first_moment.layers[l];
    auto& v = state.second_moment.layers[l];
    const auto& g = grads.layers[l];
    update(p.weight, m.weight, v.weight, g.weight);
    update(p.bias, m.bias, v.bias, g.bias);
    if (p.has_batch_norm()) {
      update(p.gain, m.gain, v.gain, g.gain);
      update(p.shift, m.shift, v.shift, g.shift);
    }
  }
}

}  // namespace fedplatoon::nn

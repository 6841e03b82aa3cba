#pragma once

// Central finite-difference check of nn::backward, shared by the unit and acceptance tests.

#include <algorithm>
#include <string>
#include <vector>

#include "fedplatoon/dense_net.hpp"

namespace fedplatoon::testing {

struct TensorCheck {
  std::string name;
  double error = 0.0;  // relative; absolute when the analytic gradient vanishes
  bool absolute = false;
};

inline double weighted_output(const nn::NetworkParams<double>& params, const nn::NetworkSpec& spec,
                              const std::vector<Eigen::MatrixXd>& inputs, const Eigen::MatrixXd& weights,
                              nn::Mode mode) {
  const auto out = nn::forward(params, spec, std::span<const Eigen::MatrixXd>(inputs), mode).output;
  return out.cwiseProduct(weights).sum();
}

inline TensorCheck compare(std::string name, const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  TensorCheck c{std::move(name)};
  const double scale = std::max(analytic.norm(), numeric.norm());
  // A bias feeding batch norm in train mode has zero gradient up to roundoff.
  if (analytic.norm() <= 1e-10) {
    c.absolute = true;
    c.error = numeric.cwiseAbs().maxCoeff();
  } else {
    c.error = (analytic - numeric).norm() / scale;
  }
  return c;
}

// Checks d/dtheta sum(net(inputs) .* weights) for every trainable tensor and every input.
inline std::vector<TensorCheck> check_gradients(nn::NetworkParams<double> params, const nn::NetworkSpec& spec,
                                                std::vector<Eigen::MatrixXd> inputs, const Eigen::MatrixXd& weights,
                                                nn::Mode mode, double step = 1e-5) {
  const auto fwd = nn::forward(params, spec, std::span<const Eigen::MatrixXd>(inputs), mode);
  const auto back = nn::backward(params, spec, fwd.cache, weights);
  const auto names = spec.layer_names();

  std::vector<TensorCheck> out;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    std::vector<std::pair<const char*, Eigen::VectorXd>> analytic;
    nn::for_each_trainable(back.params.layers[l], [&](const char* n, const auto& t) {
      analytic.emplace_back(n, Eigen::Map<const Eigen::VectorXd>(t.data(), t.size()));
    });
    std::size_t k = 0;
    nn::for_each_trainable(layer, [&](const char* n, auto& t) {
      Eigen::VectorXd numeric(t.size());
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        const double keep = t.data()[i];
        t.data()[i] = keep + step;
        const double up = weighted_output(params, spec, inputs, weights, mode);
        t.data()[i] = keep - step;
        const double down = weighted_output(params, spec, inputs, weights, mode);
        t.data()[i] = keep;
        numeric[i] = (up - down) / (2 * step);
      }
      out.push_back(compare(names[l] + "." + n, analytic[k++].second, numeric));
    });
  }
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    auto& x = inputs[b];
    Eigen::VectorXd numeric(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + step;
      const double up = weighted_output(params, spec, inputs, weights, mode);
      x.data()[i] = keep - step;
      const double down = weighted_output(params, spec, inputs, weights, mode);
      x.data()[i] = keep;
      numeric[i] = (up - down) / (2 * step);
    }
    const Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(back.inputs[b].data(), back.inputs[b].size());
    out.push_back(compare("input" + std::to_string(b), a, numeric));
  }
  return out;
}

}  // namespace fedplatoon::testing

#include <doctest.h>

#include <random>

#include "fedplatoon/adam.hpp"
#include "fedplatoon/dense_net.hpp"
#include "support/grad_check.hpp"

using namespace fedplatoon;
using namespace fedplatoon::nn;

namespace {

Eigen::MatrixXd random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Larger output-layer weights than the real initializer so upstream gradients are not tiny.
NetworkParams<double> test_params(const NetworkSpec& spec, std::mt19937_64& rng) {
  auto p = init_network<double>(spec, rng);
  std::uniform_real_distribution<double> u(0.5, 1.5), s(-0.3, 0.3);
  for (auto& l : p.layers) {
    if (!l.has_batch_norm()) continue;
    for (Index i = 0; i < l.gain.size(); ++i) {
      l.gain[i] = u(rng);
      l.shift[i] = s(rng);
      l.running_mean[i] = s(rng);
      l.running_var[i] = u(rng);
    }
  }
  p.layers.back().weight *= 100.0;
  return p;
}

void require_close(const std::vector<testing::TensorCheck>& checks, double tol) {
  for (const auto& c : checks) {
    INFO(c.name << (c.absolute ? " (absolute) " : " ") << c.error);
    CHECK(c.error <= (c.absolute ? 1e-8 : tol));
  }
}

}  // namespace

TEST_CASE("actor and critic specs have the documented shapes") {
  const auto actor = actor_spec(4, {256, 128}, 2.5);
  actor.validate();
  REQUIRE(actor.layer_count() == 3);
  const auto al = actor.layers();
  CHECK((al[0].fan_in == 4 && al[0].fan_out == 256 && al[0].batch_norm && al[0].activation == Activation::kRelu));
  CHECK((al[1].fan_in == 256 && al[1].fan_out == 128 && al[1].batch_norm));
  CHECK((al[2].fan_in == 128 && al[2].fan_out == 1 && !al[2].batch_norm && al[2].activation == Activation::kTanh));
  CHECK(actor.output_scale == 2.5);

  const auto critic = critic_spec(4, 1, 48, 256, {128});
  critic.validate();
  CHECK(critic.concat_size() == 304);
  const auto cl = critic.layers();
  REQUIRE(cl.size() == 4);
  CHECK((cl[0].fan_in == 4 && cl[0].fan_out == 48 && cl[0].batch_norm));
  CHECK((cl[1].fan_in == 1 && cl[1].fan_out == 256 && cl[1].batch_norm));
  CHECK((cl[2].fan_in == 304 && cl[2].fan_out == 128 && cl[2].batch_norm));
  CHECK((cl[3].fan_in == 128 && cl[3].fan_out == 1 && cl[3].activation == Activation::kLinear));
}

TEST_CASE("spec validation catches mismatched arities") {
  auto s = actor_spec(4, {8}, 1.0);
  s.trunk[1].fan_in = 7;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = actor_spec(4, {8}, 0.0);
  CHECK_THROWS_AS(s.validate(), InvalidParameter);
}

TEST_CASE("initialization bounds") {
  std::mt19937_64 rng(7);
  const auto spec = critic_spec(4, 1, 48, 256, {128});
  const auto p = init_network<double>(spec, rng);
  const auto layers = spec.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const bool last = l + 1 == layers.size();
    const double bound = last ? kOutputInitBound : 1.0 / std::sqrt(double(layers[l].fan_in));
    CHECK(p.layers[l].weight.cwiseAbs().maxCoeff() <= bound);
    CHECK(p.layers[l].bias.cwiseAbs().maxCoeff() <= bound);
    CHECK(p.layers[l].weight.cwiseAbs().maxCoeff() > 0.5 * bound);
    if (p.layers[l].has_batch_norm()) {
      CHECK(p.layers[l].gain.isOnes());
      CHECK(p.layers[l].shift.isZero());
      CHECK(p.layers[l].running_mean.isZero());
      CHECK(p.layers[l].running_var.isOnes());
    }
  }
}

TEST_CASE("forward shapes, scaling and batch checks") {
  std::mt19937_64 rng(1);
  const auto spec = actor_spec(4, {16, 8}, 2.5);
  const auto p = test_params(spec, rng);
  const Eigen::MatrixXd x = random_matrix(4, 5, rng);
  const auto out = forward(p, spec, x, Mode::kTrain).output;
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 5);
  CHECK(out.cwiseAbs().maxCoeff() <= 2.5);
  CHECK_THROWS_AS(forward(p, spec, Eigen::MatrixXd(random_matrix(4, 1, rng)), Mode::kTrain), InvalidBatch);
  CHECK_NOTHROW(forward(p, spec, Eigen::MatrixXd(random_matrix(4, 1, rng)), Mode::kEval));
  CHECK_THROWS_AS(forward(p, spec, Eigen::MatrixXd(random_matrix(3, 5, rng)), Mode::kEval), ShapeError);
}

TEST_CASE("batch norm train mode normalizes with the biased batch variance") {
  std::mt19937_64 rng(2);
  NetworkSpec spec;
  spec.input_sizes = {3};
  spec.branches = {{}};
  spec.trunk = {{3, 2, Activation::kLinear, true}};
  spec.validate();
  auto p = init_network<double>(spec, rng);
  const Eigen::MatrixXd x = random_matrix(3, 6, rng);
  const auto out = forward(p, spec, x, Mode::kTrain);
  const Eigen::MatrixXd z = (p.layers[0].weight * x).colwise() + p.layers[0].bias;
  for (Index r = 0; r < 2; ++r) {
    const double mean = z.row(r).mean();
    const double var = (z.row(r).array() - mean).square().mean();
    for (Index c = 0; c < 6; ++c) {
      CHECK(out.output(r, c) == doctest::Approx((z(r, c) - mean) / std::sqrt(var + 1e-3)).epsilon(1e-12));
    }
  }
  update_running_stats(p, spec, out.cache);
  const double mean0 = z.row(0).mean();
  CHECK(p.layers[0].running_mean[0] == doctest::Approx(0.01 * mean0).epsilon(1e-12));
}

TEST_CASE("eval mode uses running statistics") {
  std::mt19937_64 rng(3);
  NetworkSpec spec;
  spec.input_sizes = {2};
  spec.branches = {{}};
  spec.trunk = {{2, 1, Activation::kLinear, true}};
  auto p = init_network<double>(spec, rng);
  p.layers[0].running_mean << 0.5;
  p.layers[0].running_var << 4.0;
  p.layers[0].gain << 2.0;
  p.layers[0].shift << 1.0;
  const Eigen::MatrixXd x = random_matrix(2, 1, rng);
  const double z = (p.layers[0].weight * x)(0, 0) + p.layers[0].bias[0];
  const double y = forward(p, spec, x, Mode::kEval).output(0, 0);
  CHECK(y == doctest::Approx(2.0 * (z - 0.5) / std::sqrt(4.0 + 1e-3) + 1.0).epsilon(1e-12));
}

TEST_CASE("actor gradients match finite differences") {
  std::mt19937_64 rng(4);
  const auto spec = actor_spec(4, {12, 6}, 2.5);
  const auto p = test_params(spec, rng);
  const std::vector<Eigen::MatrixXd> x = {random_matrix(4, 8, rng)};
  const Eigen::MatrixXd g = random_matrix(1, 8, rng);
  require_close(testing::check_gradients(p, spec, x, g, Mode::kTrain), 1e-6);
  require_close(testing::check_gradients(p, spec, x, g, Mode::kEval), 1e-6);
}

TEST_CASE("critic gradients match finite differences") {
  std::mt19937_64 rng(5);
  const auto spec = critic_spec(4, 1, 6, 10, {7});
  const auto p = test_params(spec, rng);
  const std::vector<Eigen::MatrixXd> x = {random_matrix(4, 8, rng), random_matrix(1, 8, rng)};
  const Eigen::MatrixXd g = random_matrix(1, 8, rng);
  require_close(testing::check_gradients(p, spec, x, g, Mode::kTrain), 1e-6);
  require_close(testing::check_gradients(p, spec, x, g, Mode::kEval), 1e-6);
}

TEST_CASE("backward rejects a foreign cache") {
  std::mt19937_64 rng(6);
  const auto spec = actor_spec(4, {8}, 1.0);
  const auto other = actor_spec(4, {9}, 1.0);
  const auto p = init_network<double>(spec, rng);
  const auto q = init_network<double>(other, rng);
  const auto fwd = forward(q, other, Eigen::MatrixXd(random_matrix(4, 3, rng)), Mode::kTrain);
  CHECK_THROWS_AS(backward(p, spec, fwd.cache, Eigen::MatrixXd(random_matrix(1, 3, rng))), ContractError);
}

TEST_CASE("flatten and assign_flat round trip") {
  std::mt19937_64 rng(8);
  const auto spec = critic_spec(4, 1, 5, 6, {7});
  const auto p = test_params(spec, rng);
  auto q = init_network<double>(spec, rng);
  const Eigen::VectorXd flat = flatten(p);
  assign_flat(q, flat);
  CHECK(flatten(q) == flat);
  CHECK(q.layers[2].running_var == p.layers[2].running_var);
  CHECK_THROWS_AS(assign_flat(q, Eigen::VectorXd(flat.head(flat.size() - 1))), ShapeError);

  auto g = zero_gradients(p);
  const Eigen::VectorXd gf = Eigen::VectorXd::LinSpaced(flatten(g).size(), 0.0, 1.0);
  assign_flat(g, gf);
  CHECK(flatten(g) == gf);
  CHECK(gf.size() < flat.size());  // running statistics are not trainable
}

TEST_CASE("soft update mixes every tensor") {
  std::mt19937_64 rng(9);
  const auto spec = actor_spec(4, {8}, 1.0);
  auto target = test_params(spec, rng);
  const auto source = test_params(spec, rng);
  const Eigen::VectorXd t0 = flatten(target), s0 = flatten(source);
  soft_update(target, source, 0.25);
  CHECK((flatten(target) - (0.25 * s0 + 0.75 * t0)).cwiseAbs().maxCoeff() <= 1e-15);
  soft_update(target, source, 1.0);
  CHECK(flatten(target) == s0);
}

TEST_CASE("adam step matches a scalar oracle") {
  std::mt19937_64 rng(10);
  const auto spec = actor_spec(2, {3}, 1.0);
  auto params = init_network<double>(spec, rng);
  const Eigen::VectorXd w0 = flatten(params);
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-7};
  auto state = make_optimizer_state(params, cfg);
  auto grads = zero_gradients(params);
  const Index n = flatten(grads).size();

  // Every trainable entry follows its own scalar recursion.
  std::vector<double> m(std::size_t(n), 0.0), v(std::size_t(n), 0.0);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  {
    Index at = 0;
    for (auto& layer : params.layers) {
      for_each_trainable(layer, [&](const char*, auto& t) {
        for (Index i = 0; i < t.size(); ++i) w[at++] = t.data()[i];
      });
    }
  }
  for (int step = 1; step <= 5; ++step) {
    const Eigen::VectorXd g = random_matrix(n, 1, rng);
    assign_flat(grads, g);
    optimizer_step(state, params, grads);
    for (Index i = 0; i < n; ++i) {
      auto k = std::size_t(i);
      m[k] = 0.9 * m[k] + 0.1 * g[i];
      v[k] = 0.999 * v[k] + 0.001 * g[i] * g[i];
      const double mh = m[k] / (1 - std::pow(0.9, step));
      const double vh = v[k] / (1 - std::pow(0.999, step));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-7);
    }
  }
  Index at = 0;
  double worst = 0.0;
  for (auto& layer : params.layers) {
    for_each_trainable(layer, [&](const char*, auto& t) {
      for (Index i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t.data()[i] - w[at++]));
    });
  }
  CHECK(worst <= 1e-14);
  CHECK(state.step == 5);
  // Running statistics are untouched by the optimizer.
  CHECK(params.layers[0].running_mean == Eigen::VectorXd::Map(w0.data() + 3 * 2 + 3 + 3 + 3, 3));
}

TEST_CASE("adam config validation") {
  CHECK_THROWS_AS((AdamConfig{0.0, 0.9, 0.999, 1e-7}.validate()), InvalidParameter);
  CHECK_THROWS_AS((AdamConfig{1e-3, 1.0, 0.999, 1e-7}.validate()), InvalidParameter);
  CHECK_THROWS_AS((AdamConfig{1e-3, 0.9, 0.999, 0.0}.validate()), InvalidParameter);
}

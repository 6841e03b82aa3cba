#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedplatoon/adam.hpp"
#include "fedplatoon/dense_net.hpp"
#include "fedplatoon/dynamics.hpp"

namespace fedplatoon {

using Rng = std::mt19937_64;

// Ornstein-Uhlenbeck exploration noise.
struct OuNoise {
  double theta = 0.15;
  double sigma = 0.02;
  double mu = 0.0;
  double dt = 1.0;
  double value = 0.0;
};

// value' = value + theta (mu - value) dt + sigma sqrt(dt) N(0, 1)
OuNoise ou_step(const OuNoise& noise, Rng& rng);

struct Transition {
  ErrorState state;
  ErrorState next_state;
  double action = 0.0;
  double reward = 0.0;
  bool terminal = false;
};

// Bounded FIFO with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const;  // 0 = oldest retained
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // next write position once full
  std::size_t size_ = 0;
};

struct AgentConfig {
  double gamma = 0.99;
  double target_mix = 0.001;
  int batch_size = 64;
  double actor_lr = 5e-5;
  double critic_lr = 5e-4;
  std::size_t buffer_capacity = 100000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;
  double ou_theta = 0.15;
  double ou_sigma = 0.02;
  double ou_mu = 0.0;
  double ou_dt = 1.0;
  double u_max = 2.5;
  std::vector<nn::Index> actor_hidden = {256, 128};
  nn::Index critic_state_hidden = 48;
  nn::Index critic_action_hidden = 256;
  std::vector<nn::Index> critic_hidden = {128};

  void validate() const;
  nn::NetworkSpec make_actor_spec() const;
  nn::NetworkSpec make_critic_spec() const;
};

struct AgentSeeds {
  std::uint64_t init = 1;
  std::uint64_t noise = 2;
  std::uint64_t replay = 3;
};

struct AgentGradients {
  nn::Gradients<double> actor;
  nn::Gradients<double> critic;
};

// Actor, critic and their targets, in the order they are exchanged.
enum class NetworkRole : std::size_t { kActor = 0, kCritic = 1, kTargetActor = 2, kTargetCritic = 3 };
inline constexpr std::size_t kNetworkRoles = 4;
using FlatWeights = std::array<Eigen::VectorXd, kNetworkRoles>;

// clip(actor(x) [+ OU sample], +-u_max). The actor runs in eval mode on a batch of one.
// With explore set, the noise process advances one step before its value is added.
double select_action(const nn::NetworkParams<double>& actor, const nn::NetworkSpec& spec, const ErrorState& x,
                     OuNoise& noise, Rng& rng, bool explore, double u_max);

// y = r + gamma * Q'(x', mu'(x')) for non-terminal samples, y = r otherwise.
Eigen::RowVectorXd bellman_targets(const Eigen::RowVectorXd& rewards, const std::vector<bool>& terminal,
                                   const Eigen::RowVectorXd& next_q, double gamma);

struct CriticLoss {
  double loss = 0.0;
  nn::Gradients<double> grads;
  nn::ForwardCache<double> cache;
};

// mean((Q(x, u) - y)^2) and its gradient, batch statistics in train mode.
CriticLoss critic_loss(const nn::NetworkParams<double>& critic, const nn::NetworkSpec& spec,
                       const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, const Eigen::RowVectorXd& targets);

struct ActorObjective {
  double objective = 0.0;  // -mean Q(x, mu(x)), the quantity the actor descends
  nn::Gradients<double> grads;
  nn::ForwardCache<double> cache;
};

ActorObjective actor_objective(const nn::NetworkParams<double>& actor, const nn::NetworkSpec& actor_spec,
                               const nn::NetworkParams<double>& critic, const nn::NetworkSpec& critic_spec,
                               const Eigen::MatrixXd& states);

class DdpgAgent {
 public:
  DdpgAgent(const AgentConfig& config, const AgentSeeds& seeds);

  double act(const ErrorState& x, bool explore);
  void reset_noise() { noise_.value = 0.0; }
  void remember(const Transition& t) { buffer_.push(t); }
  bool ready() const { return buffer_.size() >= std::size_t(config_.batch_size); }

  // Samples a batch and returns actor and critic gradients at the current parameters.
  // Updates batch-norm running statistics of the online networks. nullopt during warm-up.
  std::optional<AgentGradients> compute_gradients();
  // Optimizer step on both online networks, then soft updates of both targets.
  void apply_gradients(const AgentGradients& grads);
  // compute_gradients + apply_gradients; false when the buffer is not yet warm.
  bool train_step();

  FlatWeights flat_weights() const;
  void assign_weights(const FlatWeights& weights);

  void save(const std::filesystem::path& dir, const std::string& prefix) const;
  void load(const std::filesystem::path& dir, const std::string& prefix);
  static std::vector<std::string> checkpoint_files(const std::string& prefix);

  const AgentConfig& config() const { return config_; }
  const nn::NetworkSpec& actor_spec() const { return actor_spec_; }
  const nn::NetworkSpec& critic_spec() const { return critic_spec_; }
  const nn::NetworkParams<double>& actor() const { return actor_; }
  const nn::NetworkParams<double>& critic() const { return critic_; }
  const nn::NetworkParams<double>& target_actor() const { return target_actor_; }
  const nn::NetworkParams<double>& target_critic() const { return target_critic_; }
  nn::NetworkParams<double>& mutable_actor() { return actor_; }
  nn::NetworkParams<double>& mutable_critic() { return critic_; }
  const nn::OptimizerState<double>& actor_optimizer() const { return actor_opt_; }
  const nn::OptimizerState<double>& critic_optimizer() const { return critic_opt_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const OuNoise& noise() const { return noise_; }

 private:
  AgentConfig config_;
  nn::NetworkSpec actor_spec_;
  nn::NetworkSpec critic_spec_;
  nn::NetworkParams<double> actor_;
  nn::NetworkParams<double> critic_;
  nn::NetworkParams<double> target_actor_;
  nn::NetworkParams<double> target_critic_;
  nn::OptimizerState<double> actor_opt_;
  nn::OptimizerState<double> critic_opt_;
  ReplayBuffer buffer_;
  OuNoise noise_;
  Rng noise_rng_;
  Rng replay_rng_;
};

}  // namespace fedplatoon

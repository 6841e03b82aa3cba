#include "fedplatoon/ddpg.hpp"

#include <algorithm>
#include <cmath>

#include "fedplatoon/tensor_io.hpp"

namespace fedplatoon {

OuNoise ou_step(const OuNoise& noise, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z = normal(rng);
  OuNoise next = noise;
  next.value = noise.value + noise.theta * (noise.mu - noise.value) * noise.dt + noise.sigma * std::sqrt(noise.dt) * z;
  return next;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw InvalidParameter("replay buffer capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (size_ < capacity_) {
    items_.push_back(t);
    ++size_;
    return;
  }
  items_[head_] = t;
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("replay buffer index");
  return items_[(head_ + i) % size_];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
  if (size_ == 0) throw InvalidParameter("cannot sample an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> out(batch);
  for (auto& i : out) i = pick(rng);
  return out;
}

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidParameter("gamma must be in [0, 1]");
  if (!(target_mix > 0.0 && target_mix <= 1.0)) throw InvalidParameter("target_mix must be in (0, 1]");
  if (batch_size < 2) throw InvalidParameter("batch_size must be >= 2");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw InvalidParameter("learning rates must be positive");
  if (buffer_capacity < std::size_t(batch_size)) throw InvalidParameter("buffer_capacity must hold one batch");
  if (!(u_max > 0.0)) throw InvalidParameter("u_max must be positive");
  if (!(ou_sigma >= 0.0) || !(ou_dt > 0.0)) throw InvalidParameter("OU sigma must be >= 0 and dt > 0");
  if (actor_hidden.empty() || critic_hidden.empty()) throw InvalidParameter("networks need hidden layers");
  make_actor_spec().validate();
  make_critic_spec().validate();
  nn::AdamConfig{actor_lr, adam_beta1, adam_beta2, adam_epsilon}.validate();
}

nn::NetworkSpec AgentConfig::make_actor_spec() const {
  auto spec = nn::actor_spec(state::kDim, actor_hidden, u_max);
  spec.bn_momentum = bn_momentum;
  spec.bn_epsilon = bn_epsilon;
  return spec;
}

nn::NetworkSpec AgentConfig::make_critic_spec() const {
  auto spec = nn::critic_spec(state::kDim, 1, critic_state_hidden, critic_action_hidden, critic_hidden);
  spec.bn_momentum = bn_momentum;
  spec.bn_epsilon = bn_epsilon;
  return spec;
}

double select_action(const nn::NetworkParams<double>& actor, const nn::NetworkSpec& spec, const ErrorState& x,
                     OuNoise& noise, Rng& rng, bool explore, double u_max) {
  const Eigen::MatrixXd input = x;
  double action = nn::forward(actor, spec, input, nn::Mode::kEval).output(0, 0);
  if (explore) {
    noise = ou_step(noise, rng);
    action += noise.value;
  }
  return std::clamp(action, -u_max, u_max);
}

Eigen::RowVectorXd bellman_targets(const Eigen::RowVectorXd& rewards, const std::vector<bool>& terminal,
                                   const Eigen::RowVectorXd& next_q, double gamma) {
  if (rewards.size() != next_q.size() || std::size_t(rewards.size()) != terminal.size()) {
    throw ShapeError("bellman_targets: batch sizes differ");
  }
  Eigen::RowVectorXd y(rewards.size());
  for (Eigen::Index j = 0; j < rewards.size(); ++j) {
    y[j] = terminal[std::size_t(j)] ? rewards[j] : rewards[j] + gamma * next_q[j];
  }
  return y;
}

CriticLoss critic_loss(const nn::NetworkParams<double>& critic, const nn::NetworkSpec& spec,
                       const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, const Eigen::RowVectorXd& targets) {
  const std::array<Eigen::MatrixXd, 2> inputs = {states, actions};
  auto fwd = nn::forward(critic, spec, std::span<const Eigen::MatrixXd>(inputs), nn::Mode::kTrain);
  const double batch = double(states.cols());
  const Eigen::MatrixXd diff = fwd.output - targets;
  CriticLoss out;
  out.loss = diff.squaredNorm() / batch;
  out.grads = nn::backward(critic, spec, fwd.cache, Eigen::MatrixXd(2.0 / batch * diff)).params;
  out.cache = std::move(fwd.cache);
  return out;
}

ActorObjective actor_objective(const nn::NetworkParams<double>& actor, const nn::NetworkSpec& actor_spec,
                               const nn::NetworkParams<double>& critic, const nn::NetworkSpec& critic_spec,
                               const Eigen::MatrixXd& states) {
  auto actor_fwd = nn::forward(actor, actor_spec, states, nn::Mode::kTrain);
  const std::array<Eigen::MatrixXd, 2> inputs = {states, actor_fwd.output};
  // Batch statistics over a one-dimensional action erase its absolute level, so dQ/du would sum to zero.
  auto critic_fwd = nn::forward(critic, critic_spec, std::span<const Eigen::MatrixXd>(inputs), nn::Mode::kEval);
  const double batch = double(states.cols());
  ActorObjective out;
  out.objective = -critic_fwd.output.sum() / batch;
  const Eigen::MatrixXd dq = Eigen::MatrixXd::Constant(1, states.cols(), -1.0 / batch);
  const auto through_critic = nn::backward(critic, critic_spec, critic_fwd.cache, dq, /*want_params=*/false);
  out.grads = nn::backward(actor, actor_spec, actor_fwd.cache, through_critic.inputs[1]).params;
  out.cache = std::move(actor_fwd.cache);
  return out;
}

DdpgAgent::DdpgAgent(const AgentConfig& config, const AgentSeeds& seeds)
    : config_(config),
      actor_spec_(config.make_actor_spec()),
      critic_spec_(config.make_critic_spec()),
      buffer_(config.buffer_capacity),
      noise_{config.ou_theta, config.ou_sigma, config.ou_mu, config.ou_dt, 0.0},
      noise_rng_(seeds.noise),
      replay_rng_(seeds.replay) {
  config_.validate();
  Rng init_rng(seeds.init);
  actor_ = nn::init_network<double>(actor_spec_, init_rng);
  critic_ = nn::init_network<double>(critic_spec_, init_rng);
  target_actor_ = actor_;
  target_critic_ = critic_;
  actor_opt_ = nn::make_optimizer_state(actor_, {config_.actor_lr, config_.adam_beta1, config_.adam_beta2,
                                                 config_.adam_epsilon});
  critic_opt_ = nn::make_optimizer_state(critic_, {config_.critic_lr, config_.adam_beta1, config_.adam_beta2,
                                                   config_.adam_epsilon});
}

double DdpgAgent::act(const ErrorState& x, bool explore) {
  return select_action(actor_, actor_spec_, x, noise_, noise_rng_, explore, config_.u_max);
}

std::optional<AgentGradients> DdpgAgent::compute_gradients() {
  if (!ready()) return std::nullopt;
  const auto idx = buffer_.sample_indices(std::size_t(config_.batch_size), replay_rng_);
  const Eigen::Index batch = Eigen::Index(idx.size());
  Eigen::MatrixXd states(state::kDim, batch), next_states(state::kDim, batch), actions(1, batch);
  Eigen::RowVectorXd rewards(batch);
  std::vector<bool> terminal(idx.size());
  for (Eigen::Index j = 0; j < batch; ++j) {
    const Transition& t = buffer_.at(idx[std::size_t(j)]);
    states.col(j) = t.state;
    next_states.col(j) = t.next_state;
    actions(0, j) = t.action;
    rewards[j] = t.reward;
    terminal[std::size_t(j)] = t.terminal;
  }

  const auto next_actions = nn::forward(target_actor_, actor_spec_, next_states, nn::Mode::kEval).output;
  const std::array<Eigen::MatrixXd, 2> next_inputs = {next_states, next_actions};
  const Eigen::RowVectorXd next_q =
      nn::forward(target_critic_, critic_spec_, std::span<const Eigen::MatrixXd>(next_inputs), nn::Mode::kEval)
          .output.row(0);
  const Eigen::RowVectorXd targets = bellman_targets(rewards, terminal, next_q, config_.gamma);

  AgentGradients grads;
  auto critic_part = critic_loss(critic_, critic_spec_, states, actions, targets);
  auto actor_part = actor_objective(actor_, actor_spec_, critic_, critic_spec_, states);
  nn::update_running_stats(critic_, critic_spec_, critic_part.cache);
  nn::update_running_stats(actor_, actor_spec_, actor_part.cache);
  grads.critic = std::move(critic_part.grads);
  grads.actor = std::move(actor_part.grads);
  return grads;
}

void DdpgAgent::apply_gradients(const AgentGradients& grads) {
  nn::optimizer_step(critic_opt_, critic_, grads.critic);
  nn::optimizer_step(actor_opt_, actor_, grads.actor);
  nn::soft_update(target_actor_, actor_, config_.target_mix);
  nn::soft_update(target_critic_, critic_, config_.target_mix);
}

bool DdpgAgent::train_step() {
  auto grads = compute_gradients();
  if (!grads) return false;
  apply_gradients(*grads);
  return true;
}

FlatWeights DdpgAgent::flat_weights() const {
  return {nn::flatten(actor_), nn::flatten(critic_), nn::flatten(target_actor_), nn::flatten(target_critic_)};
}

void DdpgAgent::assign_weights(const FlatWeights& weights) {
  nn::assign_flat(actor_, weights[0]);
  nn::assign_flat(critic_, weights[1]);
  nn::assign_flat(target_actor_, weights[2]);
  nn::assign_flat(target_critic_, weights[3]);
}

std::vector<std::string> DdpgAgent::checkpoint_files(const std::string& prefix) {
  return {prefix + "actor.fptn",        prefix + "critic.fptn",     prefix + "target_actor.fptn",
          prefix + "target_critic.fptn", prefix + "actor_adam.fptn", prefix + "critic_adam.fptn"};
}

void DdpgAgent::save(const std::filesystem::path& dir, const std::string& prefix) const {
  const auto files = checkpoint_files(prefix);
  save_tensors(dir / files[0], network_tensors(actor_spec_, actor_));
  save_tensors(dir / files[1], network_tensors(critic_spec_, critic_));
  save_tensors(dir / files[2], network_tensors(actor_spec_, target_actor_));
  save_tensors(dir / files[3], network_tensors(critic_spec_, target_critic_));
  save_tensors(dir / files[4], optimizer_tensors(actor_spec_, actor_opt_));
  save_tensors(dir / files[5], optimizer_tensors(critic_spec_, critic_opt_));
}

void DdpgAgent::load(const std::filesystem::path& dir, const std::string& prefix) {
  const auto files = checkpoint_files(prefix);
  actor_ = network_from_tensors(actor_spec_, load_tensors(dir / files[0]));
  critic_ = network_from_tensors(critic_spec_, load_tensors(dir / files[1]));
  target_actor_ = network_from_tensors(actor_spec_, load_tensors(dir / files[2]));
  target_critic_ = network_from_tensors(critic_spec_, load_tensors(dir / files[3]));
  actor_opt_ = optimizer_from_tensors(actor_spec_, actor_, load_tensors(dir / files[4]));
  critic_opt_ = optimizer_from_tensors(critic_spec_, critic_, load_tensors(dir / files[5]));
}

}  // namespace fedplatoon

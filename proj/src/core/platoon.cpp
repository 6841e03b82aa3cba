#include "fedplatoon/platoon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace fedplatoon {

Platoon::Platoon(VehicleParams leader, std::vector<VehicleParams> followers, EpisodeSpec episode,
                 RewardCoeffs coeffs, double divergence_limit)
    : leader_(leader),
      followers_(std::move(followers)),
      episode_(episode),
      coeffs_(coeffs),
      divergence_limit_(divergence_limit) {
  if (followers_.empty()) throw ConfigError("platoon needs at least one follower");
  leader_.validate();
  episode_.validate();
  coeffs_.validate();
  if (!(divergence_limit_ > 0.0)) throw InvalidParameter("divergence limit must be positive");
  matrices_.reserve(followers_.size());
  for (std::size_t i = 0; i < followers_.size(); ++i) {
    followers_[i].validate();
    const VehicleParams& pred = i == 0 ? leader_ : followers_[i - 1];
    matrices_.push_back(build_discrete_matrices(followers_[i], pred, episode_.step_time));
  }
  reset();
}

void Platoon::reset() {
  const ErrorState init =
      make_error_state(episode_.init_ep, episode_.init_ev, episode_.init_a, episode_.init_a);
  states_.assign(followers_.size(), init);
  active_.assign(followers_.size(), true);
  step_index_ = 0;
  done_ = false;
}

bool Platoon::any_diverged() const {
  return std::any_of(active_.begin(), active_.end(), [](bool a) { return !a; });
}

StepOutcome Platoon::step(std::span<const double> actions, double leader_u) {
  if (actions.size() != followers_.size()) {
    throw ConfigError("platoon step: expected " + std::to_string(followers_.size()) + " actions, got " +
                      std::to_string(actions.size()));
  }
  if (done_) throw ContractError("platoon step called after the episode finished");

  const std::size_t n = followers_.size();
  StepOutcome out;
  out.rewards.assign(n, 0.0);
  out.jerks.assign(n, 0.0);
  out.terminal.assign(n, false);

  double u_pred = leader_u;
  bool non_finite = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = std::clamp(actions[i], -followers_[i].u_max, followers_[i].u_max);
    const ErrorState& x = states_[i];
    const double a_prev = x[state::kAccel];
    ErrorState next;
    if (x.allFinite() && std::isfinite(u) && std::isfinite(u_pred)) {
      next = step_error_state(matrices_[i], x, u, u_pred);
    } else {
      next.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    out.jerks[i] = jerk(next, a_prev, episode_.step_time);
    if (active_[i]) {
      out.rewards[i] = reward(next, u, a_prev, coeffs_, episode_.step_time);
      if (!next.allFinite() || std::abs(next[state::kPositionError]) > divergence_limit_) {
        out.terminal[i] = true;
        active_[i] = false;
      }
    }
    non_finite = non_finite || !next.allFinite();
    states_[i] = next;
    u_pred = u;
  }

  ++step_index_;
  const bool budget = step_index_ >= episode_.steps;
  if (budget) {
    for (std::size_t i = 0; i < n; ++i) out.terminal[i] = out.terminal[i] || active_[i];
  }
  done_ = budget || non_finite;
  out.done = done_;
  return out;
}

}  // namespace fedplatoon

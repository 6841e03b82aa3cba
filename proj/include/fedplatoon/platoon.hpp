#pragma once

#include <span>
#include <vector>

#include "fedplatoon/dynamics.hpp"

namespace fedplatoon {

struct EpisodeSpec {
  int steps = 600;
  double step_time = 0.1;
  double init_ep = 1.0;
  double init_ev = 1.0;
  double init_a = 0.03;

  void validate() const {
    if (steps < 1) throw InvalidParameter("episode steps must be >= 1");
    if (!(step_time > 0.0)) throw InvalidParameter("episode step_time must be positive");
  }
};

struct StepOutcome {
  std::vector<double> rewards;  // 0 for vehicles already terminated before this step
  std::vector<double> jerks;
  std::vector<bool> terminal;    // vehicle's MDP episode ended on this step (divergence or step budget)
  bool done = false;             // step budget reached, or a state went non-finite
};

// A scripted leader followed by DDPG-controlled followers, stepped in error coordinates.
//
// Follower 0 tracks the leader, follower i > 0 tracks follower i - 1. The divergence
// guard is per follower: once |e_p| exceeds the limit a follower's transition is flagged
// terminal and it stops accruing reward, but it keeps driving so its followers still have
// a predecessor. The platoon runs until the step budget unless a state becomes non-finite.
class Platoon {
 public:
  Platoon(VehicleParams leader, std::vector<VehicleParams> followers, EpisodeSpec episode,
          RewardCoeffs coeffs, double divergence_limit);

  void reset();

  // Advances every follower one step. `actions` must hold one entry per follower.
  StepOutcome step(std::span<const double> actions, double leader_u);

  std::size_t size() const { return followers_.size(); }
  int step_index() const { return step_index_; }
  bool done() const { return done_; }
  const std::vector<ErrorState>& states() const { return states_; }
  const ErrorState& state(std::size_t i) const { return states_.at(i); }
  bool vehicle_active(std::size_t i) const { return active_.at(i); }
  bool any_diverged() const;
  const EpisodeSpec& episode() const { return episode_; }
  const VehicleParams& follower_params(std::size_t i) const { return followers_.at(i); }

 private:
  VehicleParams leader_;
  std::vector<VehicleParams> followers_;
  EpisodeSpec episode_;
  RewardCoeffs coeffs_;
  double divergence_limit_;
  std::vector<DiscreteMatrices> matrices_;

  std::vector<ErrorState> states_;
  std::vector<bool> active_;
  int step_index_ = 0;
  bool done_ = false;
};

}  // namespace fedplatoon

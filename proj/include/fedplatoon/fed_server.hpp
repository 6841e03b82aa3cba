#pragma once

// Synchronous federated aggregation for platoons of DDPG agents.
//
// Inter-platoon: vehicles with the same index across platoons form one group.
// Intra-platoon: groups are directional, a follower averages with its predecessors
// (or only its immediate predecessor) and the first follower is never altered.

#include <algorithm>
#include <compare>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedplatoon/ddpg.hpp"
#include "fedplatoon/errors.hpp"

namespace fedplatoon {

enum class AggregationKind { kWeights, kGradients };
enum class TopologyKind { kNone, kInter, kIntra };
enum class IntraGroup { kPredecessors, kPredecessorOnly };

struct VehicleId {
  int platoon = 0;  // 0-based
  int vehicle = 0;  // 0-based follower index; 0 tracks the leader
  auto operator<=>(const VehicleId&) const = default;
};

struct Topology {
  TopologyKind kind = TopologyKind::kNone;
  int platoons = 1;
  int vehicles = 1;  // followers per platoon
  IntraGroup intra_group = IntraGroup::kPredecessors;

  void validate() const {
    if (platoons < 1 || vehicles < 1) throw ConfigError("topology needs at least one platoon and one follower");
    if (kind == TopologyKind::kInter && platoons < 2) throw ConfigError("inter topology needs at least 2 platoons");
  }
};

struct FrlSchedule {
  double update_delay = 0.1;  // seconds between federated rounds
  double cutoff_ratio = 1.0;  // fraction of episodes with federation enabled
  double step_time = 0.1;
  int episodes_total = 1;

  int delay_steps() const {
    const double ratio = update_delay / step_time;
    return int(std::llround(ratio));
  }

  int active_episodes() const {
    return int(std::ceil(cutoff_ratio * double(episodes_total) - 1e-9));
  }

  void validate() const {
    if (!(step_time > 0.0)) throw ConfigError("schedule step_time must be positive");
    if (!(update_delay >= step_time - 1e-12)) throw ConfigError("update_delay must be at least one step");
    const double ratio = update_delay / step_time;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
      throw ConfigError("update_delay must be an integer multiple of the step time");
    }
    if (!(cutoff_ratio >= 0.0 && cutoff_ratio <= 1.0)) throw ConfigError("cutoff_ratio must be in [0, 1]");
    if (episodes_total < 0) throw ConfigError("episodes_total must be non-negative");
  }
};

// Rounds a full run performs when every episode lasts `steps_per_episode` steps.
inline std::int64_t expected_rounds(const FrlSchedule& s, int steps_per_episode) {
  return std::int64_t(s.active_episodes()) * std::int64_t(steps_per_episode / s.delay_steps());
}

std::vector<VehicleId> aggregation_group(const Topology& topology, VehicleId self);

// Elementwise uniform mean.
Eigen::VectorXd average_flat(std::span<const Eigen::VectorXd> vectors);

// True iff episode < ceil(cutoff * episodes_total) and (step + 1) * step_time is a
// multiple of update_delay. Indices are 0-based.
bool should_aggregate(const FrlSchedule& schedule, int episode, int step);

// One synchronous round: every participant submits (an empty payload abstains),
// the round is sealed, then each recipient reads the mean over its own group.
class FedServer {
 public:
  using Payload = std::vector<Eigen::VectorXd>;

  explicit FedServer(Topology topology);

  void open_round(std::vector<VehicleId> participants);
  void submit(VehicleId id, Payload payload);
  void close_round();
  // Mean over the non-abstaining members of id's group; nullopt if all abstained.
  std::optional<Payload> average_for(VehicleId id) const;

  std::int64_t rounds_completed() const { return rounds_completed_; }
  const Topology& topology() const { return topology_; }

 private:
  Topology topology_;
  std::vector<VehicleId> participants_;
  std::map<VehicleId, Payload> submissions_;
  bool open_ = false;
  bool sealed_ = false;
  std::int64_t rounds_completed_ = 0;
};

using Fleet = std::vector<std::vector<DdpgAgent>>;  // [platoon][vehicle]

enum class UpdateKind { kLocalTrain, kAggregated, kIdle };

// What every agent did during one federated agent-step, indexed [platoon][vehicle].
using UpdateRecord = std::vector<std::vector<UpdateKind>>;

// Runs one federated round over the fleet. Agents whose group is only themselves train
// locally; every other agent skips its local step and takes the group mean instead:
// all four networks in weights mode, actor/critic gradients through its own optimizer
// in gradients mode.
UpdateRecord apply_aggregation(FedServer& server, AggregationKind kind, Fleet& fleet);

}  // namespace fedplatoon

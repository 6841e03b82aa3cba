#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedplatoon/ddpg.hpp"
#include "fedplatoon/fed_server.hpp"
#include "fedplatoon/platoon.hpp"
#include "fedplatoon/stats.hpp"

namespace fedplatoon {

struct ExperimentConfig {
  std::string name = "custom";
  TopologyKind topology = TopologyKind::kNone;
  IntraGroup intra_group = IntraGroup::kPredecessors;
  AggregationKind aggregation = AggregationKind::kWeights;
  double update_delay = 0.1;
  double cutoff_ratio = 1.0;
  int platoons = 1;
  int followers = 2;  // DDPG followers per platoon; the scripted leader is extra
  int episodes = 2000;
  EpisodeSpec episode;
  VehicleParams vehicle;                         // shared by the leader and every follower
  std::map<int, VehicleParams> vehicle_overrides;  // 0-based follower index
  LeaderInputModel leader_input;
  RewardCoeffs reward;
  AgentConfig agent;
  double divergence_limit = 50.0;
  std::uint64_t train_seed = 1;
  std::uint64_t eval_seed = 6;

  void validate() const;
  Topology topology_spec() const { return {topology, platoons, followers, intra_group}; }
  FrlSchedule schedule() const { return {update_delay, cutoff_ratio, episode.step_time, episodes}; }
  VehicleParams follower_params(int i) const;
  std::vector<VehicleParams> follower_params() const;
  AgentConfig agent_config(int follower) const;
};

enum class SeedPurpose : std::uint32_t { kInit = 1, kNoise = 2, kReplay = 3, kLeader = 4 };

// Independent stream per (seed, platoon, vehicle, purpose).
std::uint64_t derive_seed(std::uint64_t seed, int platoon, int vehicle, SeedPurpose purpose);

// Replay reward of a transition cut by the divergence guard: the discounted sum of
// holding `reward` for the rest of the step budget, so ending early never pays.
double divergence_penalty(double reward, double gamma, int remaining_steps);

struct VehicleEpisode {
  int episode = 0;
  int platoon = 0;
  int vehicle = 0;
  double cumulative_reward = 0.0;
  int steps = 0;  // steps with the vehicle active
  bool diverged = false;
};

struct EpisodeSummary {
  int episode = 0;
  bool frl_active = false;
  std::int64_t frl_rounds = 0;
  int diverged_platoons = 0;
  bool flagged = false;  // more than half the platoons diverged
  int steps = 0;
  double wall_clock_s = 0.0;
};

struct UpdateCounts {
  std::int64_t local = 0;
  std::int64_t aggregated = 0;
  std::int64_t idle = 0;
  std::int64_t total() const { return local + aggregated + idle; }
};

struct TrainingLog {
  std::vector<VehicleEpisode> vehicles;
  std::vector<EpisodeSummary> episodes;
  std::int64_t frl_rounds = 0;
  std::vector<std::vector<UpdateCounts>> updates;  // [platoon][vehicle]

  // Mean over vehicles of each episode's cumulative reward.
  std::vector<double> system_rewards() const;
};

struct TrainingResult {
  TrainingLog log;
  Fleet fleet;
};

Fleet make_fleet(const ExperimentConfig& config);

using EpisodeCallback = std::function<void(const EpisodeSummary&)>;

TrainingResult run_training(const ExperimentConfig& config, const EpisodeCallback& on_episode = {});

struct TrajectoryRow {
  int step = 0;  // 1-based; the row holds the state after this step
  double time_s = 0.0;
  int platoon = 0;
  int vehicle = 0;
  double e_p = 0.0;
  double e_v = 0.0;
  double a = 0.0;
  double u = 0.0;
  double jerk = 0.0;
  double reward = 0.0;
};

struct VehicleScore {
  int platoon = 0;
  int vehicle = 0;
  double cumulative_reward = 0.0;
};

struct EvalReport {
  std::uint64_t eval_seed = 0;
  int steps = 0;
  std::vector<TrajectoryRow> rows;
  std::vector<VehicleScore> vehicles;
  double system_reward = 0.0;  // mean of vehicle cumulative rewards
};

using Policy = std::function<double(int platoon, int vehicle, const ErrorState& x)>;

// One episode from the configured initial condition with the leader seeded by eval_seed.
// No divergence guard: every vehicle runs the full step budget.
EvalReport evaluate_policy(const ExperimentConfig& config, std::uint64_t eval_seed, const Policy& policy);

// Deterministic actors, eval-mode forwards, no exploration noise.
EvalReport evaluate(const Fleet& fleet, const ExperimentConfig& config, std::uint64_t eval_seed);

SeedSummary aggregate_seeds(std::span<const EvalReport> reports, StdEstimator estimator = StdEstimator::kPopulation);

void save_checkpoints(const Fleet& fleet, const ExperimentConfig& config, const std::filesystem::path& dir);
Fleet load_checkpoints(const ExperimentConfig& config, const std::filesystem::path& dir);

std::string vehicle_label(int platoon, int vehicle);  // "p1.v2", 1-based

}  // namespace fedplatoon

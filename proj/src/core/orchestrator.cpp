#include "fedplatoon/orchestrator.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

namespace fedplatoon {

void ExperimentConfig::validate() const {
  if (platoons < 1) throw ConfigError("platoons must be >= 1");
  if (followers < 1) throw ConfigError("followers must be >= 1");
  if (episodes < 0) throw ConfigError("episodes must be >= 0");
  if (name.empty() || name.find_first_of(",;/\\\n\r\"") != std::string::npos) {
    throw ConfigError("name must be non-empty and free of , ; / \\ quotes and newlines");
  }
  topology_spec().validate();
  schedule().validate();
  for (const auto& [i, _] : vehicle_overrides) {
    if (i < 0 || i >= followers) throw ConfigError("vehicle override index " + std::to_string(i + 1) + " out of range");
  }
  try {
    episode.validate();
    vehicle.validate();
    for (const auto& [_, v] : vehicle_overrides) v.validate();
    leader_input.validate();
    reward.validate();
    agent.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  if (!(divergence_limit > 0.0)) throw ConfigError("divergence_limit must be positive");
}

VehicleParams ExperimentConfig::follower_params(int i) const {
  auto it = vehicle_overrides.find(i);
  return it == vehicle_overrides.end() ? vehicle : it->second;
}

std::vector<VehicleParams> ExperimentConfig::follower_params() const {
  std::vector<VehicleParams> out;
  for (int i = 0; i < followers; ++i) out.push_back(follower_params(i));
  return out;
}

AgentConfig ExperimentConfig::agent_config(int follower) const {
  AgentConfig cfg = agent;
  cfg.u_max = follower_params(follower).u_max;
  return cfg;
}

std::uint64_t derive_seed(std::uint64_t seed, int platoon, int vehicle, SeedPurpose purpose) {
  std::seed_seq seq{std::uint32_t(seed & 0xffffffffu), std::uint32_t(seed >> 32), std::uint32_t(platoon),
                    std::uint32_t(vehicle), std::uint32_t(purpose)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (std::uint64_t(words[0]) << 32) | words[1];
}

double divergence_penalty(double reward, double gamma, int remaining_steps) {
  if (remaining_steps < 1) throw InvalidParameter("divergence_penalty needs at least one remaining step");
  if (gamma == 1.0) return reward * double(remaining_steps);
  return reward * (1.0 - std::pow(gamma, double(remaining_steps))) / (1.0 - gamma);
}

std::vector<double> TrainingLog::system_rewards() const {
  std::vector<double> sum(episodes.size(), 0.0);
  std::vector<int> count(episodes.size(), 0);
  for (const auto& v : vehicles) {
    sum[std::size_t(v.episode)] += v.cumulative_reward;
    count[std::size_t(v.episode)] += 1;
  }
  for (std::size_t e = 0; e < sum.size(); ++e) {
    if (count[e] > 0) sum[e] /= double(count[e]);
  }
  return sum;
}

std::string vehicle_label(int platoon, int vehicle) {
  return "p" + std::to_string(platoon + 1) + ".v" + std::to_string(vehicle + 1);
}

Fleet make_fleet(const ExperimentConfig& config) {
  Fleet fleet(std::size_t(config.platoons));
  for (int p = 0; p < config.platoons; ++p) {
    fleet[std::size_t(p)].reserve(std::size_t(config.followers));
    for (int v = 0; v < config.followers; ++v) {
      const AgentSeeds seeds{derive_seed(config.train_seed, p, v, SeedPurpose::kInit),
                             derive_seed(config.train_seed, p, v, SeedPurpose::kNoise),
                             derive_seed(config.train_seed, p, v, SeedPurpose::kReplay)};
      fleet[std::size_t(p)].emplace_back(config.agent_config(v), seeds);
    }
  }
  return fleet;
}

TrainingResult run_training(const ExperimentConfig& config, const EpisodeCallback& on_episode) {
  config.validate();
  TrainingResult result;
  result.fleet = make_fleet(config);
  Fleet& fleet = result.fleet;
  TrainingLog& log = result.log;

  const auto followers = config.follower_params();
  std::vector<Platoon> platoons;
  std::vector<Rng> leader_rngs;
  for (int p = 0; p < config.platoons; ++p) {
    platoons.emplace_back(config.vehicle, followers, config.episode, config.reward, config.divergence_limit);
    leader_rngs.emplace_back(derive_seed(config.train_seed, p, 0, SeedPurpose::kLeader));
  }

  const bool federated = config.topology != TopologyKind::kNone;
  const FrlSchedule schedule = config.schedule();
  FedServer server(config.topology_spec());
  log.updates.assign(std::size_t(config.platoons), std::vector<UpdateCounts>(std::size_t(config.followers)));

  const std::size_t n = std::size_t(config.followers);
  std::vector<double> actions(n);
  for (int ep = 0; ep < config.episodes; ++ep) {
    const auto start = std::chrono::steady_clock::now();
    EpisodeSummary summary;
    summary.episode = ep;
    summary.frl_active = federated && ep < schedule.active_episodes();

    std::vector<std::vector<VehicleEpisode>> records(platoons.size());
    for (std::size_t p = 0; p < platoons.size(); ++p) {
      platoons[p].reset();
      for (auto& agent : fleet[p]) agent.reset_noise();
      for (std::size_t v = 0; v < n; ++v) records[p].push_back({ep, int(p), int(v), 0.0, 0, false});
    }

    int step = 0;
    for (; step < config.episode.steps; ++step) {
      bool all_done = true;
      for (std::size_t p = 0; p < platoons.size(); ++p) {
        Platoon& platoon = platoons[p];
        if (platoon.done()) continue;
        const std::vector<ErrorState> before = platoon.states();
        std::vector<bool> active(n);
        for (std::size_t v = 0; v < n; ++v) {
          active[v] = platoon.vehicle_active(v);
          actions[v] = fleet[p][v].act(before[v], /*explore=*/true);
        }
        const double leader_u = leader_input(config.leader_input, leader_rngs[p]);
        const StepOutcome out = platoon.step(actions, leader_u);
        for (std::size_t v = 0; v < n; ++v) {
          if (!active[v]) continue;
          // Only the divergence guard cuts the bootstrap; the step budget is a truncation.
          const bool diverged = !platoon.vehicle_active(v);
          const double stored = diverged ? divergence_penalty(out.rewards[v], config.agent.gamma,
                                                              config.episode.steps - step)
                                         : out.rewards[v];
          fleet[p][v].remember({before[v], platoon.state(v), actions[v], stored, diverged});
          records[p][v].cumulative_reward += out.rewards[v];
          records[p][v].steps += 1;
          records[p][v].diverged = diverged;
        }
        all_done = all_done && platoon.done();
      }

      UpdateRecord updates;
      if (federated && should_aggregate(schedule, ep, step)) {
        updates = apply_aggregation(server, config.aggregation, fleet);
        summary.frl_rounds += 1;
      } else {
        updates.resize(fleet.size());
        for (std::size_t p = 0; p < fleet.size(); ++p) {
          for (auto& agent : fleet[p]) {
            updates[p].push_back(agent.train_step() ? UpdateKind::kLocalTrain : UpdateKind::kIdle);
          }
        }
      }
      for (std::size_t p = 0; p < fleet.size(); ++p) {
        for (std::size_t v = 0; v < n; ++v) {
          auto& c = log.updates[p][v];
          switch (updates[p][v]) {
            case UpdateKind::kLocalTrain: ++c.local; break;
            case UpdateKind::kAggregated: ++c.aggregated; break;
            case UpdateKind::kIdle: ++c.idle; break;
          }
        }
      }
      if (all_done) {
        ++step;
        break;
      }
    }

    summary.steps = step;
    for (std::size_t p = 0; p < platoons.size(); ++p) {
      if (platoons[p].any_diverged()) ++summary.diverged_platoons;
      log.vehicles.insert(log.vehicles.end(), records[p].begin(), records[p].end());
    }
    summary.flagged = 2 * summary.diverged_platoons > config.platoons;
    summary.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.frl_rounds += summary.frl_rounds;
    log.episodes.push_back(summary);
    if (on_episode) on_episode(summary);
  }
  return result;
}

EvalReport evaluate_policy(const ExperimentConfig& config, std::uint64_t eval_seed, const Policy& policy) {
  config.validate();
  EvalReport report;
  report.eval_seed = eval_seed;
  report.steps = config.episode.steps;
  const auto followers = config.follower_params();
  const std::size_t n = followers.size();
  const double step_time = config.episode.step_time;

  for (int p = 0; p < config.platoons; ++p) {
    Platoon platoon(config.vehicle, followers, config.episode, config.reward,
                    std::numeric_limits<double>::infinity());
    Rng leader_rng(derive_seed(eval_seed, p, 0, SeedPurpose::kLeader));
    std::vector<double> cumulative(n, 0.0);
    std::vector<double> actions(n);
    std::vector<TrajectoryRow> rows;
    for (int k = 0; k < config.episode.steps && !platoon.done(); ++k) {
      for (std::size_t v = 0; v < n; ++v) {
        actions[v] = std::clamp(policy(p, int(v), platoon.state(v)), -followers[v].u_max, followers[v].u_max);
      }
      const double leader_u = leader_input(config.leader_input, leader_rng);
      const StepOutcome out = platoon.step(actions, leader_u);
      for (std::size_t v = 0; v < n; ++v) {
        const ErrorState& x = platoon.state(v);
        cumulative[v] += out.rewards[v];
        rows.push_back({k + 1, double(k + 1) * step_time, p, int(v), x[state::kPositionError], x[state::kVelocityError],
                        x[state::kAccel], actions[v], out.jerks[v], out.rewards[v]});
      }
    }
    // Group rows by vehicle, then step.
    std::stable_sort(rows.begin(), rows.end(),
                     [](const TrajectoryRow& a, const TrajectoryRow& b) { return a.vehicle < b.vehicle; });
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    for (std::size_t v = 0; v < n; ++v) report.vehicles.push_back({p, int(v), cumulative[v]});
  }
  double sum = 0.0;
  for (const auto& v : report.vehicles) sum += v.cumulative_reward;
  report.system_reward = sum / double(report.vehicles.size());
  return report;
}

EvalReport evaluate(const Fleet& fleet, const ExperimentConfig& config, std::uint64_t eval_seed) {
  if (int(fleet.size()) != config.platoons) throw LoadError("fleet does not match the configured platoons");
  for (const auto& platoon : fleet) {
    if (int(platoon.size()) != config.followers) throw LoadError("fleet does not match the configured followers");
  }
  return evaluate_policy(config, eval_seed, [&](int p, int v, const ErrorState& x) {
    const DdpgAgent& agent = fleet[std::size_t(p)][std::size_t(v)];
    OuNoise unused;
    Rng unused_rng(0);
    return select_action(agent.actor(), agent.actor_spec(), x, unused, unused_rng, /*explore=*/false,
                         agent.config().u_max);
  });
}

SeedSummary aggregate_seeds(std::span<const EvalReport> reports, StdEstimator estimator) {
  std::vector<double> values;
  for (const auto& r : reports) values.push_back(r.system_reward);
  return summarize_seeds(values, estimator);
}

namespace {
std::string agent_prefix(int p, int v) { return "p" + std::to_string(p + 1) + "_v" + std::to_string(v + 1) + "_"; }
}  // namespace

void save_checkpoints(const Fleet& fleet, const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "fptn/1";
  manifest["experiment"] = config.name;
  manifest["platoons"] = fleet.size();
  manifest["followers"] = fleet.empty() ? 0 : fleet.front().size();
  manifest["agents"] = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < fleet.size(); ++p) {
    for (std::size_t v = 0; v < fleet[p].size(); ++v) {
      const std::string prefix = agent_prefix(int(p), int(v));
      fleet[p][v].save(dir, prefix);
      manifest["agents"].push_back({{"platoon", p + 1},
                                    {"vehicle", v + 1},
                                    {"files", DdpgAgent::checkpoint_files(prefix)}});
    }
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing checkpoint manifest");
}

Fleet load_checkpoints(const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw LoadError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("unreadable checkpoint manifest: ") + e.what());
  }
  if (manifest.value("platoons", -1) != config.platoons || manifest.value("followers", -1) != config.followers) {
    throw LoadError("checkpoint manifest does not match the configured platoon layout");
  }
  Fleet fleet = make_fleet(config);
  for (int p = 0; p < config.platoons; ++p) {
    for (int v = 0; v < config.followers; ++v) fleet[std::size_t(p)][std::size_t(v)].load(dir, agent_prefix(p, v));
  }
  return fleet;
}

}  // namespace fedplatoon

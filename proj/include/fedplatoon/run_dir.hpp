#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedplatoon/orchestrator.hpp"

namespace fedplatoon {

// Floats in every CSV: 6 significant digits.
std::string csv_float(double v);

// Run-directory layout:
//   config.yaml                    resolved experiment, re-loadable with --config
//   checkpoints/                   manifest.json plus one file per network per vehicle
//   training_log.csv               one row per vehicle-episode
//   curve.csv                      system reward per episode, raw and 40-episode average
//   timing.txt                     wall-clock per episode (kept out of the CSVs)
//   eval_seed<N>_trajectory.csv    per-step evaluation trajectory
//   eval_seed<N>_summary.csv       per-vehicle cumulative reward plus the system average
namespace run_files {
inline constexpr const char* kConfig = "config.yaml";
inline constexpr const char* kCheckpoints = "checkpoints";
inline constexpr const char* kTrainingLog = "training_log.csv";
inline constexpr const char* kCurve = "curve.csv";
inline constexpr const char* kTiming = "timing.txt";
std::string eval_trajectory(std::uint64_t eval_seed);
std::string eval_summary(std::uint64_t eval_seed);
}  // namespace run_files

inline constexpr int kCurveWindow = 40;

void write_training_log(const std::filesystem::path& path, const TrainingLog& log);
void write_curve(const std::filesystem::path& path, const TrainingLog& log);
void write_timing(const std::filesystem::path& path, const TrainingLog& log);
void write_eval_trajectory(const std::filesystem::path& path, const EvalReport& report);
void write_eval_summary(const std::filesystem::path& path, const EvalReport& report, bool per_step = false);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // LoadError when absent
};

CsvTable read_csv(const std::filesystem::path& path);

// What `report` needs from one run directory.
struct RunSummary {
  std::filesystem::path dir;
  std::string method;
  std::uint64_t train_seed = 0;
  int steps = 0;
  double system_reward = 0.0;
  std::vector<double> curve;  // raw system reward per training episode
};

RunSummary read_run(const std::filesystem::path& dir, std::uint64_t eval_seed);

struct MethodReport {
  std::string method;
  std::vector<std::uint64_t> seeds;
  SeedSummary summary;
};

// Groups runs by method in first-seen order; rewards are divided by the step count when per_step.
std::vector<MethodReport> summarize_methods(const std::vector<RunSummary>& runs, bool per_step,
                                            StdEstimator estimator);

void write_report(const std::filesystem::path& path, const std::vector<MethodReport>& methods);

// episode, seeds, raw mean/std and moving-average mean/std with the one-std band.
void write_method_curve(const std::filesystem::path& path, const std::vector<RunSummary>& runs,
                        StdEstimator estimator);

}  // namespace fedplatoon

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedplatoon/stats.hpp"

namespace fedplatoon {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Calls body and maps exceptions to exit codes, reporting them on err.
int guarded(std::ostream& err, const std::function<int()>& body);

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> preset;
  std::vector<std::uint64_t> seeds;  // empty: FEDPLATOON_SEED, then the config's train seed
  std::optional<std::filesystem::path> out;  // one seed: the run directory; several: their parent
  std::optional<int> episodes;
  std::optional<std::uint64_t> eval_seed;
  int jobs = 1;
  int progress_every = 10;  // episodes between progress lines, 0 for none
};

struct EvaluateOptions {
  std::vector<std::filesystem::path> run_dirs;
  std::optional<std::uint64_t> eval_seed;  // default: the run's configured eval seed (6 for every preset)
  bool per_step = false;
};

struct ReportOptions {
  std::vector<std::filesystem::path> run_dirs;
  std::filesystem::path out = "report";
  std::uint64_t eval_seed = 6;
  bool per_step = false;
  StdEstimator estimator = StdEstimator::kPopulation;
};

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);
int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err);
int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err);

// Parses and runs a full command line; used by the executables and by tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fedplatoon

#pragma once

#include <optional>
#include <span>
#include <vector>

namespace fedplatoon {

// Trailing mean; the first window - 1 points average the available prefix.
std::vector<double> moving_average(std::span<const double> series, int window = 40);

// Population divides by n, sample by n - 1.
enum class StdEstimator { kPopulation, kSample };

struct SeedSummary {
  std::vector<double> values;
  double mean = 0.0;
  std::optional<double> stddev;  // absent for a single value
};

SeedSummary summarize_seeds(std::span<const double> system_rewards,
                            StdEstimator estimator = StdEstimator::kPopulation);

}  // namespace fedplatoon

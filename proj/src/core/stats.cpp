#include "fedplatoon/stats.hpp"

#include <cmath>
#include <stdexcept>

#include "fedplatoon/errors.hpp"

namespace fedplatoon {

std::vector<double> moving_average(std::span<const double> series, int window) {
  if (window < 1) throw InvalidParameter("moving_average window must be >= 1");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t begin = i + 1 >= std::size_t(window) ? i + 1 - std::size_t(window) : 0;
    double sum = 0.0;
    for (std::size_t j = begin; j <= i; ++j) sum += series[j];
    out[i] = sum / double(i + 1 - begin);
  }
  return out;
}

SeedSummary summarize_seeds(std::span<const double> system_rewards, StdEstimator estimator) {
  if (system_rewards.empty()) throw InvalidParameter("summarize_seeds needs at least one value");
  SeedSummary s;
  s.values.assign(system_rewards.begin(), system_rewards.end());
  double sum = 0.0;
  for (double v : s.values) sum += v;
  s.mean = sum / double(s.values.size());
  if (s.values.size() > 1) {
    double sq = 0.0;
    for (double v : s.values) sq += (v - s.mean) * (v - s.mean);
    const std::size_t ddof = estimator == StdEstimator::kSample ? 1 : 0;
    s.stddev = std::sqrt(sq / double(s.values.size() - ddof));
  }
  return s;
}

}  // namespace fedplatoon

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "fedplatoon/orchestrator.hpp"
#include "fedplatoon/stats.hpp"
#include "support/tables.hpp"

using namespace fedplatoon;

TEST_CASE("moving average") {
  SUBCASE("constant") {
    const std::vector<double> c(100, -2.5);
    for (double v : moving_average(c, 40)) CHECK(v == -2.5);
  }
  SUBCASE("zero to thirty-nine") {
    std::vector<double> s(40);
    std::iota(s.begin(), s.end(), 0.0);
    const auto m = moving_average(s, 40);
    CHECK(m.back() == doctest::Approx(19.5).epsilon(1e-15));
    CHECK(m.front() == 0.0);
    CHECK(m[1] == 0.5);
  }
  SUBCASE("window one is the identity") {
    const std::vector<double> s{3.0, -1.0, 7.5, 0.25};
    CHECK(moving_average(s, 1) == s);
  }
  SUBCASE("trailing window") {
    const std::vector<double> s{1, 2, 3, 4, 5};
    const auto m = moving_average(s, 2);
    CHECK(m == std::vector<double>{1.0, 1.5, 2.5, 3.5, 4.5});
  }
  SUBCASE("empty and invalid") {
    CHECK(moving_average(std::vector<double>{}, 40).empty());
    CHECK_THROWS_AS(moving_average(std::vector<double>{1.0}, 0), InvalidParameter);
  }
}

TEST_CASE("seed summaries") {
  SUBCASE("identical values have zero spread") {
    const std::vector<double> v(4, -3.0);
    const auto s = summarize_seeds(v);
    CHECK(s.mean == -3.0);
    REQUIRE(s.stddev);
    CHECK(*s.stddev == 0.0);
  }
  SUBCASE("a single value has no spread") {
    const std::vector<double> v{-3.0};
    CHECK_FALSE(summarize_seeds(v).stddev);
    CHECK_FALSE(summarize_seeds(v, StdEstimator::kSample).stddev);
  }
  SUBCASE("estimators") {
    const std::vector<double> v{1.0, 3.0};
    CHECK(*summarize_seeds(v, StdEstimator::kPopulation).stddev == doctest::Approx(1.0));
    CHECK(*summarize_seeds(v, StdEstimator::kSample).stddev == doctest::Approx(std::sqrt(2.0)));
  }
  SUBCASE("empty") { CHECK_THROWS_AS(summarize_seeds(std::vector<double>{}), InvalidParameter); }
}

TEST_CASE("reference seed rows recompute to two decimals") {
  for (const auto& row : testing::kReferenceRows) {
    CAPTURE(std::string(row.label));
    const auto s = summarize_seeds(row.seeds, row.estimator);
    CHECK(testing::two_decimals(s.mean, row.mean));
    REQUIRE(s.stddev);
    if (row.stddev_inconsistent) {
      CHECK_FALSE(testing::two_decimals(*s.stddev, row.stddev));
      CHECK_FALSE(testing::two_decimals(*summarize_seeds(row.seeds, StdEstimator::kSample).stddev, row.stddev));
    } else {
      CHECK(testing::two_decimals(*s.stddev, row.stddev));
    }
  }
}

TEST_CASE("first no-FRL row through aggregate_seeds") {
  std::vector<EvalReport> reports;
  for (double r : {-3.73, -2.89, -4.69, -3.38}) {
    EvalReport e;
    e.system_reward = r;
    reports.push_back(e);
  }
  const auto s = aggregate_seeds(reports);
  CHECK(s.mean == doctest::Approx(-3.6725).epsilon(1e-12));
  CHECK(*s.stddev == doctest::Approx(0.658873).epsilon(1e-5));
  CHECK(testing::two_decimals(s.mean, -3.67));
  CHECK(testing::two_decimals(*s.stddev, 0.66));
}

TEST_CASE("the four-vehicle outlier row needs the sample estimator") {
  const std::vector<double> v{-123.58, -4.59, -7.39, -4.51};
  CHECK(testing::two_decimals(*summarize_seeds(v, StdEstimator::kSample).stddev, 59.06));
  CHECK_FALSE(testing::two_decimals(*summarize_seeds(v, StdEstimator::kPopulation).stddev, 59.06));
}

#include "fedplatoon/run_dir.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedplatoon/config.hpp"

namespace fedplatoon {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, const std::filesystem::path& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw LoadError(where.string() + ": not a number: '" + text + "'");
  }
}

std::string optional_float(const std::optional<double>& v) { return v ? csv_float(*v) : std::string(); }

}  // namespace

std::string csv_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string run_files::eval_trajectory(std::uint64_t eval_seed) {
  return "eval_seed" + std::to_string(eval_seed) + "_trajectory.csv";
}

std::string run_files::eval_summary(std::uint64_t eval_seed) {
  return "eval_seed" + std::to_string(eval_seed) + "_summary.csv";
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log) {
  auto out = open_out(path);
  out << "episode,platoon,vehicle,cumulative_reward,active_steps,diverged,frl_active,frl_rounds,flagged\n";
  for (const auto& v : log.vehicles) {
    const EpisodeSummary& e = log.episodes.at(std::size_t(v.episode));
    out << v.episode + 1 << ',' << v.platoon + 1 << ',' << v.vehicle + 1 << ',' << csv_float(v.cumulative_reward)
        << ',' << v.steps << ',' << int(v.diverged) << ',' << int(e.frl_active) << ',' << e.frl_rounds << ','
        << int(e.flagged) << '\n';
  }
  close_out(out, path);
}

void write_curve(const std::filesystem::path& path, const TrainingLog& log) {
  const auto raw = log.system_rewards();
  const auto avg = moving_average(raw, kCurveWindow);
  auto out = open_out(path);
  out << "episode,system_reward,system_reward_ma" << kCurveWindow << '\n';
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out << i + 1 << ',' << csv_float(raw[i]) << ',' << csv_float(avg[i]) << '\n';
  }
  close_out(out, path);
}

void write_timing(const std::filesystem::path& path, const TrainingLog& log) {
  auto out = open_out(path);
  double total = 0.0;
  for (const auto& e : log.episodes) {
    out << "episode " << e.episode + 1 << ": " << csv_float(e.wall_clock_s) << " s\n";
    total += e.wall_clock_s;
  }
  out << "total: " << csv_float(total) << " s\n";
  close_out(out, path);
}

void write_eval_trajectory(const std::filesystem::path& path, const EvalReport& report) {
  auto out = open_out(path);
  out << "step,time_s,vehicle,e_p,e_v,a,u,jerk,reward\n";
  for (const auto& r : report.rows) {
    out << r.step << ',' << csv_float(r.time_s) << ',' << vehicle_label(r.platoon, r.vehicle) << ','
        << csv_float(r.e_p) << ',' << csv_float(r.e_v) << ',' << csv_float(r.a) << ',' << csv_float(r.u) << ','
        << csv_float(r.jerk) << ',' << csv_float(r.reward) << '\n';
  }
  close_out(out, path);
}

void write_eval_summary(const std::filesystem::path& path, const EvalReport& report, bool per_step) {
  const double scale = per_step ? 1.0 / double(report.steps) : 1.0;
  auto out = open_out(path);
  out << "vehicle,cumulative_reward\n";
  for (const auto& v : report.vehicles) {
    out << vehicle_label(v.platoon, v.vehicle) << ',' << csv_float(v.cumulative_reward * scale) << '\n';
  }
  out << "system," << csv_float(report.system_reward * scale) << '\n';
  close_out(out, path);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw LoadError("CSV has no column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot read " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw LoadError(path.string() + " is empty");
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != table.header.size()) throw LoadError(path.string() + ": ragged row '" + line + "'");
    table.rows.push_back(std::move(cells));
  }
  return table;
}

RunSummary read_run(const std::filesystem::path& dir, std::uint64_t eval_seed) {
  RunSummary run;
  run.dir = dir;
  const ExperimentConfig config = load_config(dir / run_files::kConfig);
  run.method = config.name;
  run.train_seed = config.train_seed;
  run.steps = config.episode.steps;

  const auto summary_path = dir / run_files::eval_summary(eval_seed);
  const CsvTable summary = read_csv(summary_path);
  const std::size_t vcol = summary.column("vehicle");
  const std::size_t rcol = summary.column("cumulative_reward");
  bool found = false;
  for (const auto& row : summary.rows) {
    if (row[vcol] == "system") {
      run.system_reward = parse_double(row[rcol], summary_path);
      found = true;
    }
  }
  if (!found) throw LoadError(summary_path.string() + " has no system row");

  const auto curve_path = dir / run_files::kCurve;
  if (std::filesystem::exists(curve_path)) {
    const CsvTable curve = read_csv(curve_path);
    const std::size_t col = curve.column("system_reward");
    for (const auto& row : curve.rows) run.curve.push_back(parse_double(row[col], curve_path));
  }
  return run;
}

std::vector<MethodReport> summarize_methods(const std::vector<RunSummary>& runs, bool per_step,
                                            StdEstimator estimator) {
  std::vector<MethodReport> out;
  std::vector<std::vector<double>> values;
  for (const auto& run : runs) {
    std::size_t m = 0;
    while (m < out.size() && out[m].method != run.method) ++m;
    if (m == out.size()) {
      out.push_back({run.method, {}, {}});
      values.emplace_back();
    }
    out[m].seeds.push_back(run.train_seed);
    values[m].push_back(per_step ? run.system_reward / double(run.steps) : run.system_reward);
  }
  for (std::size_t m = 0; m < out.size(); ++m) out[m].summary = summarize_seeds(values[m], estimator);
  return out;
}

void write_report(const std::filesystem::path& path, const std::vector<MethodReport>& methods) {
  auto out = open_out(path);
  out << "method,seeds,rewards,mean,std\n";
  for (const auto& m : methods) {
    std::string seeds, rewards;
    for (std::size_t i = 0; i < m.seeds.size(); ++i) {
      seeds += (i ? ";" : "") + std::to_string(m.seeds[i]);
      rewards += (i ? ";" : "") + csv_float(m.summary.values[i]);
    }
    out << m.method << ',' << seeds << ',' << rewards << ',' << csv_float(m.summary.mean) << ','
        << optional_float(m.summary.stddev) << '\n';
  }
  close_out(out, path);
}

void write_method_curve(const std::filesystem::path& path, const std::vector<RunSummary>& runs,
                        StdEstimator estimator) {
  std::size_t episodes = runs.empty() ? 0 : runs.front().curve.size();
  for (const auto& r : runs) episodes = std::min(episodes, r.curve.size());
  std::vector<std::vector<double>> smoothed;
  for (const auto& r : runs) smoothed.push_back(moving_average(r.curve, kCurveWindow));

  auto out = open_out(path);
  const std::string ma = "ma" + std::to_string(kCurveWindow);
  out << "episode,seeds,raw_mean,raw_std," << ma << "_mean," << ma << "_std," << ma << "_lower," << ma << "_upper\n";
  std::vector<double> raw(runs.size()), avg(runs.size());
  for (std::size_t e = 0; e < episodes; ++e) {
    for (std::size_t r = 0; r < runs.size(); ++r) {
      raw[r] = runs[r].curve[e];
      avg[r] = smoothed[r][e];
    }
    const SeedSummary rs = summarize_seeds(raw, estimator);
    const SeedSummary as = summarize_seeds(avg, estimator);
    out << e + 1 << ',' << runs.size() << ',' << csv_float(rs.mean) << ',' << optional_float(rs.stddev) << ','
        << csv_float(as.mean) << ',' << optional_float(as.stddev) << ',';
    if (as.stddev) out << csv_float(as.mean - *as.stddev) << ',' << csv_float(as.mean + *as.stddev);
    else out << ',';
    out << '\n';
  }
  close_out(out, path);
}

}  // namespace fedplatoon

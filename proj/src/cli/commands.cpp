#include "fedplatoon/commands.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "fedplatoon/config.hpp"
#include "fedplatoon/run_dir.hpp"

namespace fedplatoon {
namespace {

std::uint64_t parse_seed(const std::string& text, const std::string& source) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size() || text.front() == '-') throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(source + ": '" + text + "' is not a seed");
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// Trains one seed into dir and evaluates it at the configured eval seed.
void train_run(const ExperimentConfig& config, const std::filesystem::path& dir, int progress_every,
               const std::function<void(const std::string&)>& say) {
  std::filesystem::create_directories(dir);
  write_text(dir / run_files::kConfig, dump_config(config));

  const std::string tag = config.name + " seed " + std::to_string(config.train_seed);
  auto result = run_training(config, [&](const EpisodeSummary& e) {
    if (e.flagged) say(tag + ": episode " + std::to_string(e.episode + 1) + " flagged, most platoons diverged");
    if (progress_every > 0 && ((e.episode + 1) % progress_every == 0 || e.episode + 1 == config.episodes)) {
      say(tag + ": episode " + std::to_string(e.episode + 1) + "/" + std::to_string(config.episodes));
    }
  });

  save_checkpoints(result.fleet, config, dir / run_files::kCheckpoints);
  write_training_log(dir / run_files::kTrainingLog, result.log);
  write_curve(dir / run_files::kCurve, result.log);
  write_timing(dir / run_files::kTiming, result.log);

  const EvalReport report = evaluate(result.fleet, config, config.eval_seed);
  write_eval_trajectory(dir / run_files::eval_trajectory(config.eval_seed), report);
  write_eval_summary(dir / run_files::eval_summary(config.eval_seed), report);

  int flagged = 0;
  for (const auto& e : result.log.episodes) flagged += e.flagged ? 1 : 0;
  if (2 * flagged > config.episodes) {
    say("warning: " + tag + ": divergence dominated the run (" + std::to_string(flagged) + " flagged episodes)");
  }
  say(tag + ": eval seed " + std::to_string(config.eval_seed) + " system reward " + csv_float(report.system_reward) +
      ", " + std::to_string(result.log.frl_rounds) + " federated rounds -> " + dir.string());
}

}  // namespace

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err) {
  if (options.config && options.preset) throw ConfigError("use either --config or --preset, not both");
  if (!options.config && !options.preset) throw ConfigError("train needs --config or --preset");
  if (options.jobs < 1) throw ConfigError("--jobs must be >= 1");

  ExperimentConfig base = options.config ? load_config(*options.config) : preset(*options.preset);
  if (options.episodes) base.episodes = *options.episodes;
  if (options.eval_seed) base.eval_seed = *options.eval_seed;

  std::vector<std::uint64_t> seeds = options.seeds;
  if (seeds.empty()) {
    if (const char* env = std::getenv("FEDPLATOON_SEED"); env && *env) {
      seeds.push_back(parse_seed(env, "FEDPLATOON_SEED"));
    } else {
      seeds.push_back(base.train_seed);
    }
  }
  std::optional<std::filesystem::path> root = options.out;
  if (!root) {
    if (const char* env = std::getenv("FEDPLATOON_OUT"); env && *env) root = std::filesystem::path(env);
  }

  // Everything is validated before the first episode of any seed.
  std::vector<std::pair<ExperimentConfig, std::filesystem::path>> runs;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig c = base;
    c.train_seed = seed;
    c.validate();
    std::filesystem::path dir;
    if (root && seeds.size() == 1) dir = *root;
    else if (root) dir = *root / ("seed" + std::to_string(seed));
    else dir = std::filesystem::path("runs") / c.name / ("seed" + std::to_string(seed));
    runs.emplace_back(std::move(c), std::move(dir));
  }

  std::mutex io;
  auto say = [&](const std::string& line) {
    std::lock_guard lock(io);
    out << line << "\n" << std::flush;
  };
  std::atomic<std::size_t> next{0};
  std::vector<std::string> failures(runs.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        train_run(runs[i].first, runs[i].second, options.progress_every, say);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::size_t(options.jobs), runs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  int code = kExitOk;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (failures[i].empty()) continue;
    err << "error: seed " << runs[i].first.train_seed << ": " << failures[i] << "\n";
    code = kExitRuntime;
  }
  return code;
}

int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream&) {
  if (options.run_dirs.empty()) throw ConfigError("evaluate needs at least one run directory");
  for (const auto& dir : options.run_dirs) {
    if (!std::filesystem::is_directory(dir)) throw LoadError("no run directory " + dir.string());
    const ExperimentConfig config = load_config(dir / run_files::kConfig);
    const std::uint64_t seed = options.eval_seed.value_or(config.eval_seed);
    const Fleet fleet = load_checkpoints(config, dir / run_files::kCheckpoints);
    const EvalReport report = evaluate(fleet, config, seed);
    write_eval_trajectory(dir / run_files::eval_trajectory(seed), report);
    write_eval_summary(dir / run_files::eval_summary(seed), report, options.per_step);
    out << dir.string() << ": eval seed " << seed << " system reward "
        << csv_float(options.per_step ? report.system_reward / double(report.steps) : report.system_reward) << "\n";
  }
  return kExitOk;
}

int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream&) {
  if (options.run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<RunSummary> runs;
  for (const auto& dir : options.run_dirs) runs.push_back(read_run(dir, options.eval_seed));

  const auto methods = summarize_methods(runs, options.per_step, options.estimator);
  std::filesystem::create_directories(options.out);
  write_report(options.out / "report.csv", methods);
  for (const auto& m : methods) {
    std::vector<RunSummary> group;
    for (const auto& r : runs) {
      if (r.method == m.method) group.push_back(r);
    }
    write_method_curve(options.out / ("curve_" + m.method + ".csv"), group, options.estimator);
  }
  for (const auto& m : methods) {
    out << m.method << ": mean " << csv_float(m.summary.mean);
    if (m.summary.stddev) out << " std " << csv_float(*m.summary.stddev);
    out << " over " << m.seeds.size() << " seed(s)\n";
  }
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated DDPG training for vehicle platoons"};
  app.require_subcommand(1);

  TrainOptions train;
  std::string train_config, train_preset, train_out;
  std::vector<std::uint64_t> train_seeds;
  int episodes = -1;
  std::uint64_t train_eval_seed = 0;
  auto* t = app.add_subcommand("train", "train one or more seeds and evaluate them");
  t->add_option("--config", train_config, "experiment YAML file");
  t->add_option("--preset", train_preset, "named preset (see `presets`)");
  t->add_option("--seed", train_seeds, "training seed(s); repeat or comma-separate")->delimiter(',');
  t->add_option("--out", train_out, "run directory, or parent directory with several seeds");
  t->add_option("--episodes", episodes, "override the episode count")->check(CLI::NonNegativeNumber);
  auto* t_eval = t->add_option("--eval-seed", train_eval_seed, "evaluation seed for the post-training report");
  t->add_option("--jobs", train.jobs, "seeds trained in parallel")->check(CLI::PositiveNumber);
  t->add_option("--progress", train.progress_every, "episodes between progress lines, 0 for none");

  EvaluateOptions evaluate_opts;
  std::uint64_t eval_seed = 6;
  auto* e = app.add_subcommand("evaluate", "evaluate checkpoints in run directories");
  e->add_option("run_dirs", evaluate_opts.run_dirs, "run directories")->required();
  auto* e_seed = e->add_option("--eval-seed", eval_seed, "evaluation seed (default: the run's, 6 for presets)");
  e->add_flag("--per-step", evaluate_opts.per_step, "divide cumulative rewards by the step count");

  ReportOptions report_opts;
  std::string estimator = "population";
  auto* r = app.add_subcommand("report", "seed table and reward curves across run directories");
  r->add_option("run_dirs", report_opts.run_dirs, "run directories")->required();
  r->add_option("--out", report_opts.out, "output directory")->capture_default_str();
  r->add_option("--eval-seed", report_opts.eval_seed, "evaluation seed to read")->capture_default_str();
  r->add_flag("--per-step", report_opts.per_step, "divide cumulative rewards by the step count");
  r->add_option("--std", estimator, "standard deviation estimator")
      ->check(CLI::IsMember({"population", "sample"}))
      ->capture_default_str();

  std::string dump_name;
  auto* p = app.add_subcommand("presets", "list presets, or print one as YAML");
  p->add_option("name", dump_name, "preset to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  return guarded(err, [&] {
    if (*t) {
      if (!train_config.empty()) train.config = train_config;
      if (!train_preset.empty()) train.preset = train_preset;
      if (!train_out.empty()) train.out = train_out;
      if (episodes >= 0) train.episodes = episodes;
      if (*t_eval) train.eval_seed = train_eval_seed;
      train.seeds = train_seeds;
      return cmd_train(train, out, err);
    }
    if (*e) {
      if (*e_seed) evaluate_opts.eval_seed = eval_seed;
      return cmd_evaluate(evaluate_opts, out, err);
    }
    if (*r) {
      report_opts.estimator = estimator == "sample" ? StdEstimator::kSample : StdEstimator::kPopulation;
      return cmd_report(report_opts, out, err);
    }
    if (dump_name.empty()) {
      for (const auto& name : preset_names()) out << name << "\n";
    } else {
      out << dump_config(preset(dump_name));
    }
    return kExitOk;
  });
}

}  // namespace fedplatoon

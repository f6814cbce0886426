// Command-line front end: train, eval, collect, bench-model, plot.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "pegrl/harness.hpp"

namespace fs = std::filesystem;
using namespace pegrl;

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

RunConfig load_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

std::string out_dir(const std::string& flag, const RunConfig& cfg) {
  return flag.empty() ? cfg.output_dir : flag;
}

int cmd_train(const RunConfig& base, const std::vector<std::uint64_t>& seeds_flag,
              const std::vector<std::string>& strategies_flag, const std::string& out, int jobs) {
  std::vector<Strategy> strategies;
  for (const auto& s : strategies_flag) strategies.push_back(parse_strategy(s));
  if (strategies.empty()) strategies.push_back(base.strategy);
  const auto seeds = seeds_flag.empty() ? base.seeds : seeds_flag;
  fs::create_directories(out);

  struct Job {
    Strategy strategy;
    std::uint64_t seed;
  };
  std::vector<Job> work;
  for (auto st : strategies)
    for (auto sd : seeds) work.push_back({st, sd});

  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::vector<std::string> failures;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < work.size();) {
      const auto& j = work[i];
      const std::string tag = run_tag(j.strategy, j.seed);
      try {
        const RunResult r = train_run(base, j.seed, j.strategy);
        write_run_artifacts(r, out, tag);
        int successes = 0;
        for (const auto& m : r.episodes) successes += m.success;
        std::lock_guard lock(io);
        std::cout << tag << ": " << r.episodes.size() << " episodes, " << successes
                  << " successes, " << r.audit.lppr_active_steps << " LPPR steps, "
                  << r.wall_seconds << " s\n";
      } catch (const std::exception& e) {
        std::lock_guard lock(io);
        failures.push_back(tag + ": " + e.what());
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(work.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& f : failures) std::cerr << "error: " << f << '\n';
  return failures.empty() ? 0 : kRuntimeExit;
}

int cmd_eval(const RunConfig& cfg, const std::vector<std::string>& checkpoints,
             const std::vector<double>& angles, int trials, const std::string& out) {
  const auto table = evaluate_robustness(cfg, checkpoints, angles, trials);
  fs::create_directories(out);
  csv::write_robustness((fs::path(out) / "robustness.csv").string(), table);
  for (const auto& r : table)
    std::cout << r.angle_deg << " deg: " << r.successes << "/" << r.trials << '\n';
  return 0;
}

int cmd_collect(const RunConfig& cfg, std::size_t steps, std::uint64_t seed,
                const std::string& out) {
  fs::create_directories(out);
  const auto rows = collect_dataset(cfg, steps, seed);
  const auto path = (fs::path(out) / "dataset.csv").string();
  csv::write_transitions(path, rows);
  std::cout << path << ": " << rows.size() << " rows\n";
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& log, const std::string& out) {
  const auto rows = csv::read_transitions(log);
  const auto table = benchmark_predictors(std::span<const Transition>(rows), cfg.klmf,
                                          cfg.normalizer());
  fs::create_directories(out);
  write_benchmark((fs::path(out) / "predictor_benchmark.csv").string(), table);
  for (const auto& s : table)
    std::cout << s.method << ": win " << s.winning_rate << ", error " << s.mean_error << " +- "
              << s.error_std << '\n';
  return 0;
}

// Each group is label=metrics1.csv,metrics2.csv,...
int cmd_plot(const std::vector<std::string>& groups, const std::string& out) {
  std::vector<std::string> labels;
  std::vector<LearningCurve> curves;
  for (const auto& g : groups) {
    const auto eq = g.find('=');
    if (eq == std::string::npos) throw ConfigError("plot group must look like label=a.csv,b.csv");
    labels.push_back(g.substr(0, eq));
    std::vector<std::vector<csv::EpisodeMetrics>> runs;
    for (auto p : csv::split(std::string_view(g).substr(eq + 1)))
      runs.push_back(csv::read_metrics(std::string(p)));
    curves.push_back(aggregate(runs));
  }
  fs::create_directories(out);
  write_curves_csv((fs::path(out) / "learning_curves.csv").string(), labels, curves);
  write_curves_svg((fs::path(out) / "learning_curves.svg").string(), labels, curves);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peg-in-hole reinforcement learning with model-guided exploration"};
  app.require_subcommand(1);

  std::string config_path, out;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out, "Output directory (default: config output_dir)");

  std::vector<std::uint64_t> seeds;
  std::vector<std::string> strategies;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto* train = app.add_subcommand("train", "Run training for each strategy and seed");
  train->add_option("--seed", seeds, "Seed (repeatable; default: config seeds)");
  train->add_option("--strategy", strategies, "mge, imr or plain (repeatable)")
      ->check(CLI::IsMember({"mge", "imr", "plain"}));
  train->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  std::vector<std::string> checkpoints;
  std::vector<double> angles{0, 1, 3, 5, 7, 9};
  int trials = 10;
  auto* eval = app.add_subcommand("eval", "Success rate over initial angles");
  eval->add_option("--checkpoint", checkpoints, "Checkpoint file (repeatable)")->required();
  eval->add_option("--angles", angles, "Initial angles in degrees")->delimiter(',');
  eval->add_option("--trials", trials, "Trials per angle")->check(CLI::NonNegativeNumber);

  std::size_t steps = 1000;
  std::uint64_t collect_seed = 1;
  auto* collect = app.add_subcommand("collect", "Log exploratory transitions");
  collect->add_option("--steps", steps, "Number of transitions");
  collect->add_option("--seed", collect_seed, "Seed");

  std::string log;
  auto* bench = app.add_subcommand("bench-model", "Score one-step predictors on a log");
  bench->add_option("--log", log, "Transition CSV")->required();

  std::vector<std::string> groups;
  auto* plot = app.add_subcommand("plot", "Aggregate metrics into learning curves");
  plot->add_option("--group", groups, "label=metrics_a.csv,metrics_b.csv (repeatable)")
      ->required();

  // Global flags are also accepted after the subcommand.
  for (auto* sub : {train, eval, collect, bench, plot}) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--out", out, "Output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }

  try {
    if (*plot) return cmd_plot(groups, out.empty() ? "out" : out);
    const RunConfig cfg = load_or_default(config_path);
    const std::string dir = out_dir(out, cfg);
    if (*train) return cmd_train(cfg, seeds, strategies, dir, jobs);
    if (*eval) return cmd_eval(cfg, checkpoints, angles, trials, dir);
    if (*collect) return cmd_collect(cfg, steps, collect_seed, dir);
    if (*bench) return cmd_bench(cfg, log, dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeExit;
  }
  return 0;
}

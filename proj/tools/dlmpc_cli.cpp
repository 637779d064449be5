#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dlmpc/experiment.hpp"

using namespace dlmpc;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> settings;
  std::string output_dir;
  std::string system;
  std::string scenario;
  std::string controller;
  int subsystems = 0;
  int radius = -1;
  int horizon = 0;
  int steps = -1;
  long long seed = -1;
  bool terminal = false;
};

void add_common(CLI::App* app, CommonArgs& args) {
  app->add_option("-c,--config", args.config_path, "key = value configuration file");
  app->add_option("-s,--set", args.settings, "override a configuration key (key=value), repeatable");
  app->add_option("-o,--output-dir", args.output_dir, "output directory");
  app->add_option("--system", args.system, "pendulum_chain benchmark_chain import");
  app->add_option("--scenario", args.scenario, "s1 s2 s3 c1 c2 c3 c4");
  app->add_option("--controller", args.controller, "algorithm1 algorithm2 centralized");
  app->add_option("-N,--subsystems", args.subsystems, "number of subsystems");
  app->add_option("-d,--radius", args.radius, "locality radius d");
  app->add_option("-T,--horizon", args.horizon, "prediction horizon in steps");
  app->add_option("--steps", args.steps, "closed-loop steps");
  app->add_option("--seed", args.seed, "initial-state seed");
  app->add_flag("--terminal", args.terminal, "impose x_T = 0");
}

/// File values, then the output-directory environment variable, then flags.
ExperimentConfig resolve(const CommonArgs& args) {
  ExperimentConfig cfg = args.config_path.empty() ? ExperimentConfig{} : load_config(args.config_path);
  if (const char* env = std::getenv("DLMPC_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  for (const auto& s : args.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  if (!args.system.empty()) cfg.system = args.system;
  if (!args.scenario.empty()) cfg.scenario = args.scenario;
  if (!args.controller.empty()) cfg.controller = args.controller;
  if (args.subsystems > 0) cfg.subsystems = args.subsystems;
  if (args.radius >= 0) cfg.radius = args.radius;
  if (args.horizon > 0) cfg.horizon = args.horizon;
  if (args.steps >= 0) cfg.steps = args.steps;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.terminal) cfg.terminal_constraint = true;
  validate(cfg);
  return cfg;
}

std::ofstream open_output(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  const fs::path path = fs::path(cfg.output_dir) / name;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

int simulate(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve(args);
  const Scenario sc = build_scenario(cfg);
  std::unique_ptr<ParallelScheduler> pool;
  if (cfg.scheduler == "parallel") pool = std::make_unique<ParallelScheduler>(cfg.threads);
  const RunRecord rec = run_simulation(cfg, sc, sc.controller, pool.get());
  {
    auto out = open_output(cfg, "trajectory.csv");
    write_trajectory_csv(out, rec, sc.model.partition());
  }
  {
    auto out = open_output(cfg, "stats.csv");
    write_stats_csv(out, rec);
  }
  if (sc.controller != Controller::centralized) {
    auto admm = open_output(cfg, "admm_stats.csv");
    write_admm_stats_csv(admm, rec.admm_stats);
    auto msgs = open_output(cfg, "messages.csv");
    write_message_csv(msgs, rec.message_log);
    if (sc.controller == Controller::algorithm2) {
      auto cons = open_output(cfg, "consensus_stats.csv");
      write_consensus_stats_csv(cons, rec.consensus_stats);
    }
  }
  std::cout << "scenario " << sc.name << " controller " << controller_name(sc.controller) << ": " << rec.steps()
            << " steps, closed-loop cost " << rec.cost;
  if (sc.controller != Controller::centralized) {
    std::cout << ", audit " << (rec.audit.passed ? "passed" : "FAILED");
  }
  std::cout << "\noutputs in " << cfg.output_dir << "\n";
  if (!rec.complete) {
    std::cerr << "run stopped: " << rec.failure << "\n";
    return 1;
  }
  return 0;
}

int benchmark(const CommonArgs& args, const std::string& sweep) {
  const ExperimentConfig cfg = resolve(args);
  const auto rows = run_benchmark(cfg, sweep);
  auto out = open_output(cfg, "benchmark_" + sweep + ".csv");
  write_benchmark_csv(out, rows);
  write_benchmark_csv(std::cout, rows);
  return 0;
}

int run_verify(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve(args);
  const VerifyReport report = verify(cfg);
  for (const auto& c : report.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
  std::cout << (report.passed ? "verify: all checks passed\n" : "verify: FAILED\n");
  return report.passed ? 0 : 1;
}

int localizability(const CommonArgs& args, const std::string& model_path) {
  ExperimentConfig cfg = resolve(args);
  if (!model_path.empty()) {
    cfg.system = "import";
    cfg.model_path = model_path;
  }
  const SystemModel model = build_system(cfg);
  const auto report = check_localizability(model, cfg.radius, HorizonSpec(cfg.horizon, model.partition()));
  std::cout << "d = " << cfg.radius << ", T = " << cfg.horizon << ": " << (report.feasible ? "localizable" : "NOT localizable")
            << " (worst residual " << report.worst_residual;
  if (!report.feasible) std::cout << " at column " << report.worst_column;
  std::cout << ")\n";
  return report.feasible ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed localized MPC simulator"};
  app.require_subcommand(1);

  CommonArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "closed-loop run of one scenario; writes trajectory and stats CSV");
  add_common(sim, sim_args);

  CommonArgs bench_args;
  std::string sweep = "N";
  auto* bench = app.add_subcommand("benchmark", "runtime and subproblem-size sweeps over cases c1-c4");
  add_common(bench, bench_args);
  bench->add_option("--sweep", sweep, "N or d")->check(CLI::IsMember({"N", "d"}));

  CommonArgs verify_args;
  auto* ver = app.add_subcommand("verify", "distributed vs centralized, audit and achievability checks");
  add_common(ver, verify_args);

  CommonArgs loc_args;
  std::string model_path;
  auto* loc = app.add_subcommand("localizability", "feasibility of the locality constraints for a model and d");
  add_common(loc, loc_args);
  loc->add_option("-m,--model", model_path, "model JSON file");

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed()) return simulate(sim_args);
    if (bench->parsed()) return benchmark(bench_args, sweep);
    if (ver->parsed()) return run_verify(verify_args);
    if (loc->parsed()) return localizability(loc_args, model_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

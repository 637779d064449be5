#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dlmpc/reference.hpp"

namespace dlmpc {

/// Flat key = value configuration. Keys match the field names below; `#`
/// starts a comment.
struct ExperimentConfig {
  std::string system = "pendulum_chain";  // pendulum_chain | benchmark_chain | import
  std::string model_path;                 // for system = import
  int subsystems = 4;                     // N
  int radius = 1;                         // d
  int horizon = 50;                       // T (prediction steps)
  double dt = 0.2;
  std::string scenario = "s1";            // s1 s2 s3 | c1 c2 c3 c4
  bool terminal_constraint = false;
  std::string controller;                 // empty: chosen by the scenario
  int steps = 20;                         // closed-loop steps
  double rho = 1.0;
  int adapt_every = 25;                   // residual balancing period, 0 = fixed rho
  double adapt_ratio = 3.0;
  double mu = 5.0;
  double eps_p = 1e-4;
  double eps_d = 1e-4;
  double eps_x = 1e-4;
  int max_iter = 5000;
  int max_inner = 2000;
  std::uint64_t seed = 2020;
  std::string output_dir = "dlmpc_out";
  std::string scheduler = "sequential";   // sequential | parallel
  int threads = 0;
  // Scenario 3 and case constraints.
  double angle_gap = 0.05;
  double constraint_after = 2.0;          // seconds
  double state_bound = 2.0;
  double input_bound = 0.5;
  double difference_bound = 2.5;
  // Benchmark sweeps.
  std::vector<int> sweep_n = {10, 25, 50, 100};
  std::vector<int> sweep_d = {1, 2, 3};
  int bench_horizon = 5;
  int bench_steps = 4;
  // Fault injection for verify.
  std::string fault = "none";             // none | far_model_read | far_message
  int fault_agent = 0;
};

/// Sets one key; unknown keys and malformed values throw.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
void validate(const ExperimentConfig& cfg);
std::string describe(const ExperimentConfig& cfg);

/// Uniform in [-1, 1] per component from mt19937_64: -1 + 2 (r >> 11) 2^-53.
Vector seeded_state(int n, std::uint64_t seed);

struct Scenario {
  std::string name;
  SystemModel model;
  ProblemSchedule schedule;
  Controller controller = Controller::algorithm1;
  Vector x0;
  bool coupled = false;
  bool constrained = false;
};

SystemModel build_system(const ExperimentConfig& cfg);
Scenario build_scenario(const ExperimentConfig& cfg);

EngineOptions engine_options(const ExperimentConfig& cfg);
/// Oracle settings used against the distributed runs.
QpSettings oracle_settings();

/// Closed loop for the configured scenario and controller.
RunRecord run_simulation(const ExperimentConfig& cfg, const Scenario& scenario, Controller controller,
                         Scheduler* scheduler = nullptr, bool track_achievability = false);

struct BenchmarkRow {
  std::string sweep;  // "N" or "d"
  std::string scenario;
  int subsystems = 0;
  int radius = 0;
  int horizon = 0;
  SubproblemCounts counts;  // max over agents
  double iterations = 0.0;  // mean over warm-started steps
  double runtime_per_iter_ms = 0.0;
  double runtime_per_step_ms = 0.0;
  bool audit_passed = false;
};

/// Sweeps N at d = cfg.radius or d at N = cfg.subsystems over cases c1..c4
/// (or only cfg.scenario when it names a case). Runtime is averaged over the
/// steps after the first, which all start warm.
std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& cfg, const std::string& sweep);
void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  bool passed = false;
  std::vector<CheckResult> checks;
};

/// Localizability, distributed-vs-oracle closed loop, audit and achievability.
VerifyReport verify(const ExperimentConfig& cfg);

/// Largest relative sup-norm state deviation over the common steps.
double closed_loop_deviation(const RunRecord& a, const RunRecord& b);

}  // namespace dlmpc

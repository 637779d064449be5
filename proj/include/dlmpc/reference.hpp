#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dlmpc/admm.hpp"

namespace dlmpc {

struct CentralizedSolution {
  Trajectory trajectory;
  Vector stacked;           // trajectory in Phi row order
  double objective = 0.0;
  double residual = 0.0;    // largest dynamics or constraint violation
  int iterations = 0;       // 0 for the direct equality-constrained solve
};

/// Dense QP over the stacked (x, u) trajectory with the dynamics as equality
/// constraints.
CentralizedSolution solve_centralized(const MpcProblem& problem, const Vector& x0, const QpSettings& settings = {});

enum class Controller { algorithm1, algorithm2, centralized };

const char* controller_name(Controller controller);
Controller parse_controller(const std::string& name);

struct StepStats {
  int t = 0;
  int iterations = 0;
  int inner_iterations = 0;
  double setup_ms = 0.0;
  double iteration_ms = 0.0;      // simulated parallel time over all iterations
  double max_agent_ms = 0.0;      // setup plus iterations
  std::vector<double> per_iteration_ms;
  std::size_t messages = 0;
  std::size_t bytes = 0;
  double objective = 0.0;         // predicted-plan objective
  double terminal_norm = 0.0;     // ||x_T|| of the Phi-based plan
  double terminal_norm_psi = 0.0; // ||x_T|| of the Psi-based plan
  double achievability = 0.0;     // worst Psi achievability residual at the end of the step
};

struct RunRecord {
  Controller controller = Controller::centralized;
  Matrix x;  // n x (steps + 1)
  Matrix u;  // p x steps
  std::vector<StepStats> stats;
  std::vector<Trajectory> predictions;
  std::vector<AdmmStatRow> admm_stats;
  std::vector<ConsensusStatRow> consensus_stats;
  std::vector<MessageLogRow> message_log;
  std::vector<SubproblemCounts> counts;
  AuditReport audit;
  double cost = 0.0;
  bool complete = true;
  std::string failure;
  int steps() const { return static_cast<int>(u.cols()); }
};

/// Problem to solve at real time step t (constraints may depend on t).
using ProblemSchedule = std::function<MpcProblem(int t)>;

struct RecedingOptions {
  Controller controller = Controller::centralized;
  EngineOptions engine;
  QpSettings oracle;
  Scheduler* scheduler = nullptr;      // sequential when null
  std::vector<Vector> disturbance;     // empty means zero
  bool keep_predictions = false;
  bool track_achievability = false;    // worst Psi residual over every iteration
};

/// Measure, solve, apply the first input and advance the plant for `steps`
/// real time steps. A solver failure stops the run and returns the partial
/// record with `complete == false`.
RunRecord receding_horizon(const ProblemSchedule& schedule, const SystemModel& plant, const Vector& x0, int steps,
                           const RecedingOptions& options);

/// sum_{t < steps} x'Qx + u'Ru + x(steps)' Q x(steps).
double closed_loop_cost(const RunRecord& record, const StageCost& cost);

void write_trajectory_csv(std::ostream& out, const RunRecord& record, const SubsystemPartition& partition);
void write_stats_csv(std::ostream& out, const RunRecord& record);
void write_admm_stats_csv(std::ostream& out, const std::vector<AdmmStatRow>& rows);
void write_consensus_stats_csv(std::ostream& out, const std::vector<ConsensusStatRow>& rows);
void write_message_csv(std::ostream& out, const std::vector<MessageLogRow>& rows);

}  // namespace dlmpc

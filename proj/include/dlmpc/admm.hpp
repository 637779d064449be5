#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dlmpc/agents.hpp"
#include "dlmpc/consensus.hpp"
#include "dlmpc/kernels.hpp"
#include "dlmpc/local_qp.hpp"
#include "dlmpc/mpc_problem.hpp"
#include "dlmpc/sls.hpp"

namespace dlmpc {

struct AdmmParams {
  double rho = 1.0;
  double eps_p = 1e-4;
  double eps_d = 1e-4;
  int max_iter = 5000;
  bool warm_start = true;
  // Residual balancing. Every adapt_every iterations, when the worst primal
  // residual exceeds adapt_ratio times the worst dual residual (or the
  // reverse), rho is multiplied (divided) by adapt_factor. 0 keeps rho fixed.
  int adapt_every = 0;
  double adapt_ratio = 10.0;
  double adapt_factor = 2.0;
};

void validate(const AdmmParams& params);

/// Row update: argmin f(Phi_r x0) + rho/2 ||Phi_r - Psi_r + Lambda_r||^2 over
/// the local polytope. The subproblem carries rho, the cost and x0.
Vector row_update(RowSubproblem& sub, const Vector& psi_row, const Vector& lambda_row);

/// Closed-form column update: projection of Phi_c + Lambda_c onto the local
/// achievability constraint.
Matrix column_update(const ColumnProjector& proj, const Matrix& phi_col, const Matrix& lambda_col);

/// lambda + phi - psi.
Matrix dual_update(const Matrix& phi, const Matrix& psi, const Matrix& lambda);

/// ||phi - psi_new|| <= eps_p and ||psi_new - psi_old|| <= eps_d (Frobenius).
bool converged(const Matrix& phi, const Matrix& psi_new, const Matrix& psi_old, const AdmmParams& params);

/// Local achievability data for one subsystem's columns: the constraint rows
/// touching `col_rows` restricted to those Phi rows, and the identity
/// right-hand side on `cols`. Model blocks are read through `view` and only
/// where the structural support says they are nonzero.
ColumnProjector build_column_projector(const ModelView& view, const InterconnectionGraph& graph,
                                       const HorizonSpec& horizon, const std::vector<int>& col_rows,
                                       const std::vector<int>& cols);

enum class Algorithm { decoupled, coupled };

const char* algorithm_name(Algorithm algorithm);

struct AdmmStatRow {
  int step;
  int iter;
  int subsystem;
  double primal_residual;
  double dual_residual;
};

/// Sizes of one subsystem's row and column subproblems over entries of Phi.
struct SubproblemCounts {
  int row_variables = 0;
  int row_constraints = 0;
  int column_variables = 0;
  int column_constraints = 0;
};

struct EngineOptions {
  Algorithm algorithm = Algorithm::decoupled;
  int radius = 1;
  AdmmParams admm;
  ConsensusParams consensus;
  QpSettings qp;
  bool keep_stats = false;
  bool keep_round_log = false;
  bool throw_on_limit = true;
  FaultPlan fault;
};

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  int inner_iterations = 0;
  double setup_ms = 0.0;                  // simulated parallel time of the per-step setup
  double iteration_ms = 0.0;              // simulated parallel time of all iterations
  std::vector<double> per_iteration_ms;   // simulated parallel time of each iteration
  std::size_t messages = 0;
  std::size_t bytes = 0;
  double primal_residual = 0.0;           // max over agents at the final iteration
  double dual_residual = 0.0;
  double rho = 0.0;                       // penalty in effect at the final iteration
};

struct StepResult {
  Vector u;              // first input, assembled from the agents' local inputs
  Trajectory predicted;  // plan implied by Phi
  SolveReport report;
};

class AdmmLimitError : public SolverError {
 public:
  AdmmLimitError(const std::string& what, std::vector<double> primal_history, std::vector<double> dual_history)
      : SolverError(what), primal_history(std::move(primal_history)), dual_history(std::move(dual_history)) {}
  std::vector<double> primal_history;
  std::vector<double> dual_history;
};

/// Per-subsystem agents running the distributed solver over a message bus.
///
/// Each agent owns the rows and columns of Phi of its subsystem. Setup
/// (projectors, footprints, message plans) happens once; `solve` runs one MPC
/// step from a measured state.
class DistributedMpc {
 public:
  DistributedMpc(const MpcProblem& problem, EngineOptions options, Scheduler& scheduler);
  ~DistributedMpc();
  DistributedMpc(const DistributedMpc&) = delete;
  DistributedMpc& operator=(const DistributedMpc&) = delete;

  StepResult solve(const Vector& measured_state);

  /// Swaps in new costs and constraints on the same plant and horizon. Model
  /// data and iterates are kept; consensus copies restart if footprints change.
  void set_problem(const MpcProblem& problem);

  using IterationHook = std::function<void(int iteration, const DistributedMpc& engine)>;
  void set_iteration_hook(IterationHook hook) { hook_ = std::move(hook); }

  /// Harness-side views for validation; agents never use these.
  ResponseColumn assemble_phi() const;
  ResponseColumn assemble_psi() const;
  /// Trajectory copies held by an agent (coupled algorithm), keyed by footprint row.
  std::vector<std::pair<int, double>> footprint_values(int agent) const;

  const MpcProblem& problem() const { return problem_; }
  const EngineOptions& options() const { return options_; }
  const InterconnectionGraph& graph() const { return graph_; }
  const LocalityMask& mask() const { return mask_; }
  const PartitionSets& partitions() const { return parts_; }
  const AccessLog& access_log() const { return log_; }
  const MessageBus& bus() const { return bus_; }
  const ColumnProjector& projector(int agent) const;
  std::vector<SubproblemCounts> subproblem_counts() const;
  const std::vector<AdmmStatRow>& admm_stats() const { return admm_stats_; }
  const std::vector<ConsensusStatRow>& consensus_stats() const { return consensus_stats_; }
  int steps_solved() const { return step_; }

 private:
  struct Agent;

  void setup_agent(int i);
  void build_row_spec(int i);
  void register_holders();
  void measure(const Vector& measured_state);
  void deliver(const RoundId& round);
  void run_phase(const std::function<void(int)>& work, std::vector<double>* sink);
  long next_round() { return ++sequence_; }
  void decoupled_row_phase(int outer, double& elapsed);
  void coupled_row_phase(int outer, double& elapsed, int& inner_total);

  MpcProblem problem_;
  EngineOptions options_;
  Scheduler* scheduler_;
  InterconnectionGraph graph_;
  LocalityMask mask_;
  PartitionSets parts_;
  AccessLog log_;
  MessageBus bus_;
  std::vector<std::unique_ptr<Agent>> agents_;
  std::vector<double> phase_ms_;
  std::vector<AdmmStatRow> admm_stats_;
  std::vector<ConsensusStatRow> consensus_stats_;
  IterationHook hook_;
  long sequence_ = 0;
  int step_ = 0;
  bool has_solution_ = false;
  bool footprints_changed_ = false;
  double rho_ = 0.0;
};

struct AlgorithmResult {
  ResponseColumn psi;
  ResponseColumn phi;
  StepResult step;
  std::vector<AdmmStatRow> admm_stats;
  std::vector<ConsensusStatRow> consensus_stats;
};

/// One-shot decoupled solve (no consensus layer).
AlgorithmResult solve_decoupled(const MpcProblem& problem, int radius, const Vector& x0, const AdmmParams& params,
                                Scheduler& scheduler);

/// One-shot solve with the nested consensus loop replacing the row update.
AlgorithmResult solve_coupled(const MpcProblem& problem, int radius, const Vector& x0, const AdmmParams& admm,
                              const ConsensusParams& consensus, Scheduler& scheduler);

}  // namespace dlmpc

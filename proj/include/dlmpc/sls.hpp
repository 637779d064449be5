#pragma once

#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "dlmpc/model.hpp"

namespace dlmpc {

/// Finite-horizon layout of the stacked response Phi = [Phi_x; Phi_u].
///
/// Phi_x has T+1 time blocks of n rows, Phi_u has T blocks of p rows. Only the
/// first block column is represented, so Phi has n columns (one per entry of
/// x0).
class HorizonSpec {
 public:
  enum class Kind { state, input };

  struct RowInfo {
    Kind kind;
    int time;
    int component;  // global state or input index
    int owner;      // subsystem
  };

  HorizonSpec() = default;
  HorizonSpec(int steps, SubsystemPartition partition);

  int steps() const { return steps_; }
  int n() const { return partition_.n(); }
  int p() const { return partition_.p(); }
  const SubsystemPartition& partition() const { return partition_; }

  int x_rows() const { return (steps_ + 1) * n(); }
  int u_rows() const { return steps_ * p(); }
  int rows() const { return x_rows() + u_rows(); }

  int x_row(int t, int k) const { return t * n() + k; }
  int u_row(int t, int k) const { return x_rows() + t * p() + k; }
  RowInfo row_info(int row) const;

 private:
  int steps_ = 0;
  SubsystemPartition partition_;
};

/// Block sparsity of the first block column of Phi induced by d-hop sets:
/// Phi_x block (i, j) is allowed iff i is in out_j(d), Phi_u block (i, j) iff
/// i is in out_j(d + 1). The pattern is identical for every time block.
class LocalityMask {
 public:
  LocalityMask() = default;
  LocalityMask(const InterconnectionGraph& graph, int d, const HorizonSpec& horizon);

  int radius() const { return d_; }
  const HorizonSpec& horizon() const { return horizon_; }

  bool x_allowed(int row_subsystem, int col_subsystem) const;
  bool u_allowed(int row_subsystem, int col_subsystem) const;
  bool allowed(int row, int col) const;

  /// Columns allowed in a row of Phi, ascending.
  std::vector<int> row_support(int row) const;
  /// Rows allowed in a column of Phi, ascending.
  std::vector<int> column_support(int col) const;
  std::size_t nonzeros() const;

 private:
  int d_ = 0;
  HorizonSpec horizon_;
  std::vector<bool> x_blocks_;
  std::vector<bool> u_blocks_;
};

/// First block column of the system response, stored densely with zeros
/// outside the locality mask.
struct ResponseColumn {
  HorizonSpec horizon;
  Matrix phi;  // rows() x n

  auto phi_x() const { return phi.topRows(horizon.x_rows()); }
  auto phi_u() const { return phi.bottomRows(horizon.u_rows()); }
};

/// Z_AB * Phi = E1 restricted to the first block column.
struct Achievability {
  Eigen::SparseMatrix<double> z_ab;  // (T+1)n x rows()
  Matrix e1;                         // (T+1)n x n
};

Achievability assemble_achievability(const SystemModel& model, const HorizonSpec& horizon);

/// Frobenius norm of Z_AB * Phi - E1.
double achievability_residual(const Achievability& ach, const Matrix& phi);

LocalityMask build_locality_mask(const InterconnectionGraph& graph, int d, const HorizonSpec& horizon);

struct LocalizabilityReport {
  bool feasible = false;
  double worst_residual = 0.0;  // relative to ||E1||_F
  int worst_column = -1;
};

/// Solves the masked least-squares problem column by column and reports
/// whether the locality and achievability constraints intersect.
LocalizabilityReport check_localizability(const SystemModel& model, int d, const HorizonSpec& horizon,
                                          double tolerance = 1e-8);

/// Row/column ownership for one subsystem.
struct SubsystemSets {
  std::vector<int> rows;         // owned rows of Phi: state rows then input rows
  std::vector<int> cols;         // owned columns (entries of x0)
  std::vector<int> row_support;  // columns touching the owned rows
  std::vector<int> col_support;  // rows touching the owned columns
  std::vector<int> x_row_cols;   // columns allowed in the owned state rows
  std::vector<int> u_row_cols;   // columns allowed in the owned input rows
  std::vector<int> row_peers;    // subsystems owning columns in row_support
  std::vector<int> col_peers;    // subsystems owning rows in col_support
};

using PartitionSets = std::vector<SubsystemSets>;

PartitionSets build_partitions(const LocalityMask& mask, const SubsystemPartition& partition);

struct Trajectory {
  Matrix x;  // n x (T+1), column t is x_t
  Matrix u;  // p x T
};

Trajectory reconstruct_trajectory(const ResponseColumn& response, const Vector& x0);

/// All block columns of the responses, used only for validating the
/// controller realization on small systems.
struct FullResponse {
  HorizonSpec horizon;
  Matrix phi_x;  // (T+1)n x (T+1)n, block lower triangular
  Matrix phi_u;  // Tp x (T+1)n, block lower triangular
};

/// Completes a causal Phi_u into an achievable full response by rolling the
/// achievability recursion forward for every block column.
FullResponse complete_full_response(const SystemModel& model, const HorizonSpec& horizon,
                                    const Matrix& phi_u);

double full_achievability_residual(const SystemModel& model, const FullResponse& full);

/// Runs u = Phi_u w_hat, x_hat = (Phi_x - I) w_hat, w_hat = x - x_hat step by
/// step against the plant. `w` stacks [x0; w_0; ...; w_{T-1}].
Trajectory realize_controller(const SystemModel& model, const FullResponse& full, const Vector& w);

/// Mask coordinates and values as structured text.
std::string response_to_json(const ResponseColumn& response, const LocalityMask& mask);
ResponseColumn response_from_json(const std::string& text);

}  // namespace dlmpc

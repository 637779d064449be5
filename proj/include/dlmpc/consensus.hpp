#pragma once

#include <vector>

#include "dlmpc/local_qp.hpp"

namespace dlmpc {

struct ConsensusParams {
  double mu = 1.0;
  double eps_x = 1e-4;
  int max_inner = 2000;
};

void validate(const ConsensusParams& params);

/// Joint minimization over the own row slice and the local trajectory
/// copies, given last round's consensus values `z` and scaled duals `y`.
RowSolution consensus_x_update(RowSubproblem& sub, const Vector& psi_row, const Vector& lambda_row, const Vector& z,
                               const Vector& y);

/// Average of (copy + dual) over all holders of an entry.
Vector consensus_z_update(const std::vector<Vector>& copies, const std::vector<Vector>& duals);

/// y + x - z.
Vector consensus_y_update(const Vector& x, const Vector& z, const Vector& y);

struct ConsensusStatRow {
  int step;
  int outer_iter;
  int inner_iter;
  int subsystem;
  double consensus_residual;
};

}  // namespace dlmpc

#include "dlmpc/consensus.hpp"

#include "dlmpc/agents.hpp"

namespace dlmpc {

void validate(const ConsensusParams& params) {
  if (!(params.mu > 0.0) || !(params.eps_x > 0.0) || params.max_inner <= 0) {
    throw std::invalid_argument("consensus parameters must be positive");
  }
}

RowSolution consensus_x_update(RowSubproblem& sub, const Vector& psi_row, const Vector& lambda_row, const Vector& z,
                               const Vector& y) {
  if (psi_row.size() != lambda_row.size()) throw std::invalid_argument("consensus_x_update: slice size mismatch");
  return sub.solve(psi_row - lambda_row, z, y);
}

Vector consensus_z_update(const std::vector<Vector>& copies, const std::vector<Vector>& duals) {
  if (copies.empty()) throw ProtocolError("consensus_z_update: no copies received");
  if (copies.size() != duals.size()) throw ProtocolError("consensus_z_update: missing dual for a copy");
  Vector sum = Vector::Zero(copies.front().size());
  for (std::size_t k = 0; k < copies.size(); ++k) {
    if (copies[k].size() != sum.size() || duals[k].size() != sum.size()) {
      throw ProtocolError("consensus_z_update: payload size mismatch");
    }
    sum += copies[k] + duals[k];
  }
  return sum / static_cast<double>(copies.size());
}

Vector consensus_y_update(const Vector& x, const Vector& z, const Vector& y) {
  if (x.size() != z.size() || y.size() != z.size()) throw std::invalid_argument("consensus_y_update: size mismatch");
  return y + x - z;
}

}  // namespace dlmpc

#pragma once

#include <vector>

#include "dlmpc/model.hpp"
#include "dlmpc/sls.hpp"

namespace dlmpc {

/// y_S' W y_S + q' y_S over trajectory entries S, where the trajectory vector
/// y = [x_0; ...; x_T; u_0; ...; u_{T-1}] shares the row order of Phi.
struct QuadraticTerm {
  int owner = 0;
  std::vector<int> indices;
  Matrix weight;  // symmetric PSD, |S| x |S|
  Vector linear;  // empty or |S|
};

/// coeffs' y_S <= bound, or == bound when `equality` is set.
struct LinearConstraint {
  int owner = 0;
  std::vector<int> indices;
  Vector coeffs;
  double bound = 0.0;
  bool equality = false;
};

/// Time-invariant stage cost x'Qx + u'Ru used to score realized trajectories.
struct StageCost {
  Matrix state_weight;
  Matrix input_weight;
};

/// Finite-horizon MPC instance: plant, horizon, per-subsystem cost terms and
/// polytopic constraints, optional terminal constraint x_T = 0.
class MpcProblem {
 public:
  MpcProblem() = default;
  MpcProblem(SystemModel model, int steps);

  const SystemModel& model() const { return model_; }
  const HorizonSpec& horizon() const { return horizon_; }
  int steps() const { return horizon_.steps(); }
  int trajectory_size() const { return horizon_.rows(); }

  void add_cost(QuadraticTerm term);
  void add_constraint(LinearConstraint constraint);
  void set_terminal_constraint(bool enabled) { terminal_ = enabled; }
  bool terminal_constraint() const { return terminal_; }
  void set_stage_cost(StageCost cost);
  const StageCost& stage_cost() const { return stage_; }

  const std::vector<QuadraticTerm>& costs() const { return costs_; }
  const std::vector<LinearConstraint>& user_constraints() const { return constraints_; }
  /// User constraints followed by one equality per terminal state entry.
  std::vector<LinearConstraint> constraints() const;

  /// Some cost term or constraint touches entries owned by another subsystem.
  bool coupled() const;
  bool has_inequalities() const;

  double objective(const Vector& y) const;
  /// Largest violation over all constraints (0 when feasible).
  double max_violation(const Vector& y) const;
  Vector stack(const Trajectory& traj) const;

 private:
  SystemModel model_;
  HorizonSpec horizon_;
  std::vector<QuadraticTerm> costs_;
  std::vector<LinearConstraint> constraints_;
  StageCost stage_;
  bool terminal_ = false;
};

/// Subsystem owning a trajectory entry.
int trajectory_owner(const HorizonSpec& horizon, int index);

}  // namespace dlmpc

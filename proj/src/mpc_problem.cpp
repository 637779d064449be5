#include "dlmpc/mpc_problem.hpp"

#include <algorithm>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace dlmpc {

namespace {

void check_indices(const std::vector<int>& indices, int size, const char* what) {
  for (int k : indices) {
    if (k < 0 || k >= size) throw std::out_of_range(std::string(what) + ": trajectory index out of range");
  }
  std::vector<int> sorted = indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument(std::string(what) + ": repeated trajectory index");
  }
}

}  // namespace

int trajectory_owner(const HorizonSpec& horizon, int index) { return horizon.row_info(index).owner; }

MpcProblem::MpcProblem(SystemModel model, int steps)
    : model_(std::move(model)), horizon_(steps, model_.partition()) {
  const int n = model_.partition().n();
  const int p = model_.partition().p();
  stage_ = StageCost{Matrix::Zero(n, n), Matrix::Zero(p, p)};
}

void MpcProblem::add_cost(QuadraticTerm term) {
  const auto size = static_cast<Eigen::Index>(term.indices.size());
  check_indices(term.indices, trajectory_size(), "cost term");
  if (term.owner < 0 || term.owner >= model_.subsystems()) throw std::out_of_range("cost term: bad owner");
  if (term.weight.rows() != size || term.weight.cols() != size) {
    throw std::invalid_argument("cost term: weight has wrong shape");
  }
  if (term.linear.size() == 0) term.linear = Vector::Zero(size);
  if (term.linear.size() != size) throw std::invalid_argument("cost term: linear part has wrong length");
  if (!term.weight.allFinite() || !term.linear.allFinite()) throw std::invalid_argument("cost term: non-finite data");
  if ((term.weight - term.weight.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + term.weight.norm())) {
    throw std::invalid_argument("cost term: weight is not symmetric");
  }
  if (size > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(term.weight, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * (1.0 + term.weight.norm())) {
      throw std::invalid_argument("cost term: weight is not positive semidefinite");
    }
  }
  costs_.push_back(std::move(term));
}

void MpcProblem::add_constraint(LinearConstraint constraint) {
  check_indices(constraint.indices, trajectory_size(), "constraint");
  if (constraint.owner < 0 || constraint.owner >= model_.subsystems()) {
    throw std::out_of_range("constraint: bad owner");
  }
  if (constraint.coeffs.size() != static_cast<Eigen::Index>(constraint.indices.size())) {
    throw std::invalid_argument("constraint: coefficient count mismatch");
  }
  if (!constraint.coeffs.allFinite() || !std::isfinite(constraint.bound)) {
    throw std::invalid_argument("constraint: non-finite data");
  }
  constraints_.push_back(std::move(constraint));
}

void MpcProblem::set_stage_cost(StageCost cost) {
  const int n = model_.partition().n();
  const int p = model_.partition().p();
  if (cost.state_weight.rows() != n || cost.state_weight.cols() != n || cost.input_weight.rows() != p ||
      cost.input_weight.cols() != p) {
    throw std::invalid_argument("stage cost: wrong shape");
  }
  stage_ = std::move(cost);
}

std::vector<LinearConstraint> MpcProblem::constraints() const {
  std::vector<LinearConstraint> out = constraints_;
  if (!terminal_) return out;
  const auto& part = model_.partition();
  for (int k = 0; k < part.n(); ++k) {
    out.push_back(LinearConstraint{part.state_owner(k), {horizon_.x_row(steps(), k)}, Vector::Ones(1), 0.0, true});
  }
  return out;
}

bool MpcProblem::coupled() const {
  auto foreign = [&](int owner, const std::vector<int>& indices) {
    return std::any_of(indices.begin(), indices.end(),
                       [&](int k) { return trajectory_owner(horizon_, k) != owner; });
  };
  for (const auto& term : costs_) {
    if (foreign(term.owner, term.indices)) return true;
  }
  for (const auto& c : constraints_) {
    if (foreign(c.owner, c.indices)) return true;
  }
  return false;
}

bool MpcProblem::has_inequalities() const {
  return std::any_of(constraints_.begin(), constraints_.end(), [](const LinearConstraint& c) { return !c.equality; });
}

double MpcProblem::objective(const Vector& y) const {
  if (y.size() != trajectory_size()) throw std::invalid_argument("objective: trajectory has wrong length");
  double total = 0.0;
  for (const auto& term : costs_) {
    Vector local(term.indices.size());
    for (std::size_t k = 0; k < term.indices.size(); ++k) local(static_cast<Eigen::Index>(k)) = y(term.indices[k]);
    total += local.dot(term.weight * local) + term.linear.dot(local);
  }
  return total;
}

double MpcProblem::max_violation(const Vector& y) const {
  double worst = 0.0;
  for (const auto& c : constraints()) {
    double value = 0.0;
    for (std::size_t k = 0; k < c.indices.size(); ++k) value += c.coeffs(static_cast<Eigen::Index>(k)) * y(c.indices[k]);
    const double gap = value - c.bound;
    worst = std::max(worst, c.equality ? std::abs(gap) : gap);
  }
  return worst;
}

Vector MpcProblem::stack(const Trajectory& traj) const {
  const int n = horizon_.n();
  const int p = horizon_.p();
  if (traj.x.rows() != n || traj.x.cols() != steps() + 1 || traj.u.rows() != p || traj.u.cols() != steps()) {
    throw std::invalid_argument("stack: trajectory has wrong shape");
  }
  Vector y(trajectory_size());
  for (int t = 0; t <= steps(); ++t) y.segment(horizon_.x_row(t, 0), n) = traj.x.col(t);
  for (int t = 0; t < steps(); ++t) y.segment(horizon_.u_row(t, 0), p) = traj.u.col(t);
  return y;
}

}  // namespace dlmpc

#pragma once

#include <vector>

#include <Eigen/SparseCore>

#include "dlmpc/kernels.hpp"
#include "dlmpc/mpc_problem.hpp"

namespace dlmpc {

/// Row-major flattening of a row slice of Phi where every row carries its own
/// set of allowed columns.
struct SliceLayout {
  std::vector<int> rows;
  std::vector<std::vector<int>> cols;
  std::vector<Eigen::Index> offsets;  // rows.size() + 1 entries

  SliceLayout() = default;
  SliceLayout(std::vector<int> rows, std::vector<std::vector<int>> cols);
  Eigen::Index size() const { return offsets.empty() ? 0 : offsets.back(); }
  Eigen::Index row_size(std::size_t k) const { return offsets[k + 1] - offsets[k]; }
};

/// min 1/2 w'Pw + c'w  s.t.  G w <= h, A w = b.
///
/// The matrices are fixed at construction. Variables are split into
/// independent groups (no coupling through P or any constraint row) and each
/// group keeps its own factorization, or a warm-started iterative solver when
/// it carries inequalities.
class LocalQp {
 public:
  LocalQp() = default;
  LocalQp(const Matrix& p, const Matrix& g, const Matrix& a, const QpSettings& settings = {});

  Vector solve(const Vector& c, const Vector& h, const Vector& b);

  int components() const { return static_cast<int>(components_.size()); }
  Eigen::Index variables() const { return dim_; }
  Eigen::Index inequalities() const { return ineqs_; }
  Eigen::Index equalities() const { return eqs_; }
  bool iterative() const;
  /// True when some group with inequalities is handled by active-set search.
  bool exact() const;
  /// Iterations of the iterative solvers in the last call, summed over groups.
  int last_iterations() const { return last_iterations_; }

 private:
  struct Component {
    std::vector<Eigen::Index> vars;
    std::vector<Eigen::Index> ineq_rows;
    std::vector<Eigen::Index> eq_rows;
    EqQpFactor direct;
    QpSolver iterative;
    ActiveSetQp exact;
    bool uses_iterative = false;
    bool uses_exact = false;
  };

  Eigen::Index dim_ = 0;
  Eigen::Index ineqs_ = 0;
  Eigen::Index eqs_ = 0;
  std::vector<Component> components_;
  std::vector<Eigen::Index> empty_ineq_rows_;
  std::vector<Eigen::Index> empty_eq_rows_;
  int last_iterations_ = 0;
};

/// Static description of one subsystem's row problem.
///
/// The footprint is the list of trajectory entries the subsystem reasons about:
/// its own rows first, then foreign rows copied for consensus. `shared[k]` is
/// true when footprint entry k is held by more than one subsystem.
struct RowProblemSpec {
  SliceLayout own;
  std::vector<int> foreign_rows;
  std::vector<bool> shared;
  std::vector<QuadraticTerm> costs;
  std::vector<LinearConstraint> constraints;

  std::size_t footprint_size() const { return own.rows.size() + foreign_rows.size(); }
  int footprint_row(std::size_t k) const;
  /// Footprint position of a trajectory entry, or -1.
  int footprint_index(int row) const;
};

struct RowSolution {
  Vector phi;        // own slice, SliceLayout order
  Vector footprint;  // trajectory values on the footprint
};

/// Row subproblem of one MPC step:
///
///   min f(X) + rho/2 ||Phi_r - V||^2 + mu/2 ||X - Z + Y||^2_shared
///   s.t. X_own = Phi_r x0, X in the local polytope.
///
/// Only the component of each own row along its x0 slice affects the cost,
/// so the problem is solved over one scalar per own row plus the foreign
/// copies. With no foreign rows and no shared rows it is the plain row
/// update of the decoupled algorithm.
class RowSubproblem {
 public:
  RowSubproblem() = default;
  /// `x0_slices[k]` holds x0 on the allowed columns of own row k.
  RowSubproblem(const RowProblemSpec& spec, const std::vector<Vector>& x0_slices, double rho, double mu,
                const QpSettings& settings = {});

  RowSolution solve(const Vector& v, const Vector& z, const Vector& y);

  const LocalQp& qp() const { return qp_; }
  std::size_t footprint_size() const { return footprint_; }
  /// Decision variables and constraints of the reduced problem.
  Eigen::Index variables() const { return qp_.variables(); }
  Eigen::Index constraint_count() const { return qp_.inequalities() + qp_.equalities(); }

 private:
  SliceLayout own_;
  std::size_t footprint_ = 0;
  std::vector<Vector> directions_;  // unit x0 direction per own row (empty if x0 slice is zero)
  std::vector<Vector> x0_slices_;
  std::vector<double> scale_;       // ||x0 slice|| per own row
  std::vector<Eigen::Index> var_of_row_;
  Eigen::SparseMatrix<double> map_;      // footprint = map * w + offset
  Eigen::SparseMatrix<double> hessian_;  // cost Hessian on the footprint
  Vector gradient_;
  Vector consensus_weight_;
  Eigen::SparseMatrix<double> g_;
  Vector h_;
  Eigen::SparseMatrix<double> a_;
  Vector b_;
  double mu_ = 0.0;
  LocalQp qp_;
};

}  // namespace dlmpc

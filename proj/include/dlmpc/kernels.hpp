#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "dlmpc/model.hpp"

namespace dlmpc {

/// Raised by the convex kernels when a subproblem cannot be solved.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularKktError : public SolverError {
 public:
  SingularKktError(const std::string& what, int kkt_rank, int kkt_size, int constraint_rank, int constraints)
      : SolverError(what), kkt_rank(kkt_rank), kkt_size(kkt_size), constraint_rank(constraint_rank),
        constraints(constraints) {}
  int kkt_rank;
  int kkt_size;
  int constraint_rank;
  int constraints;
};

class IterationLimitError : public SolverError {
 public:
  IterationLimitError(const std::string& what, double primal, double dual)
      : SolverError(what), primal_residual(primal), dual_residual(dual) {}
  double primal_residual;
  double dual_residual;
};

class InfeasibleError : public SolverError {
 public:
  using SolverError::SolverError;
};

/// Moore-Penrose pseudo-inverse with cutoff sigma_max * max(rows, cols) * eps.
Matrix pseudo_inverse(const Matrix& m);

/// Precomputed data for the Euclidean projection onto {Psi : Z Psi = b}.
class ColumnProjector {
 public:
  ColumnProjector() = default;
  ColumnProjector(Matrix constraint, Matrix rhs);

  const Matrix& constraint() const { return z_; }
  const Matrix& pinv() const { return z_pinv_; }
  const Matrix& rhs() const { return b_; }
  /// Orthonormal basis of the null space of Z.
  const Matrix& null_basis() const { return null_basis_; }
  /// Minimum-norm solution Z^+ b.
  const Matrix& particular() const { return particular_; }
  int rank() const { return rank_; }
  double condition() const { return condition_; }
  /// Z Z^+ b = b within 1e-10, i.e. the local system is solvable.
  bool consistent() const { return consistent_; }
  double consistency_residual() const { return consistency_residual_; }

  Eigen::Index variables() const { return z_.cols(); }
  Eigen::Index constraints() const { return z_.rows(); }

 private:
  Matrix z_;
  Matrix z_pinv_;
  Matrix b_;
  Matrix null_basis_;
  Matrix particular_;
  int rank_ = 0;
  double condition_ = 0.0;
  bool consistent_ = true;
  double consistency_residual_ = 0.0;
};

/// V + Z^+ (b - Z V), evaluated through the null-space basis when that is cheaper.
Matrix project_affine(const ColumnProjector& proj, const Matrix& v);

/// {z : G z <= h, Aeq z = beq}. Either part may be empty.
struct Polytope {
  Matrix g;
  Vector h;
  Matrix a_eq;
  Vector b_eq;

  static Polytope unconstrained(Eigen::Index dim);
  Eigen::Index dim() const { return g.cols(); }
  Eigen::Index inequalities() const { return g.rows(); }
  Eigen::Index equalities() const { return a_eq.rows(); }
};

/// Factored KKT system of min 1/2 z'Hz + g'z s.t. Aeq z = beq, reusable for
/// changing (g, beq).
class EqQpFactor {
 public:
  EqQpFactor() = default;
  EqQpFactor(const Matrix& h, const Matrix& a_eq);

  Vector solve(const Vector& g, const Vector& b_eq) const;
  /// Multipliers of the last solve (same length as b_eq).
  Eigen::Index dim() const { return dim_; }
  Eigen::Index equalities() const { return eqs_; }

 private:
  Eigen::PartialPivLU<Matrix> lu_;
  Eigen::Index dim_ = 0;
  Eigen::Index eqs_ = 0;
};

Vector solve_eq_qp(const Matrix& h, const Vector& g, const Matrix& a_eq, const Vector& b_eq);

struct QpSettings {
  double rho = 1.0;
  double sigma = 1e-6;
  int max_iter = 10000;
  double eps_abs = 1e-8;
  double eps_infeasible = 1e-6;
  int check_every = 5;
  bool polish = true;
};

struct QpResult {
  Vector z;
  Vector y_eq;
  Vector y_ineq;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
};

/// Operator-splitting QP solver for min 1/2 z'Hz + g'z over a polytope.
///
/// The matrix data (H, G, Aeq) is fixed at construction and factored once;
/// `solve` accepts new vectors and warm-starts from the previous solution.
class QpSolver {
 public:
  QpSolver() = default;
  QpSolver(const Matrix& h, const Matrix& g_ineq, const Matrix& a_eq, QpSettings settings = {});

  QpResult solve(const Vector& g, const Vector& h_ineq, const Vector& b_eq);
  void reset();

  Eigen::Index dim() const { return h_.rows(); }

 private:
  bool try_polish(const Vector& g, const Vector& h_ineq, const Vector& b_eq, QpResult& out) const;

  QpSettings settings_;
  Matrix h_;
  Matrix c_;  // [Aeq; G]
  Eigen::Index eqs_ = 0;
  Vector rho_;
  Eigen::LLT<Matrix> kkt_;
  Vector z_;
  Vector w_;
  Vector y_;
};

Vector solve_qp(const Matrix& h, const Vector& g, const Polytope& polytope, const QpSettings& settings = {});

/// Exact solver for small strictly convex QPs with few inequality rows.
/// Searches active sets, starting from the one that was optimal last time.
class ActiveSetQp {
 public:
  static constexpr Eigen::Index kMaxInequalities = 10;

  ActiveSetQp() = default;
  ActiveSetQp(const Matrix& h, const Matrix& g_ineq, const Matrix& a_eq);

  /// H positive definite, independent equality rows, at most kMaxInequalities rows.
  static bool suitable(const Matrix& h, const Matrix& g_ineq, const Matrix& a_eq);

  Vector solve(const Vector& g, const Vector& h_ineq, const Vector& b_eq);
  /// KKT systems solved by the last call.
  int last_trials() const { return trials_; }

 private:
  bool try_set(unsigned set, const Vector& g, const Vector& h_ineq, const Vector& b_eq, Vector& z);

  struct Factor {
    bool built = false;
    bool invertible = false;
    Eigen::FullPivLU<Matrix> lu;
  };

  Matrix h_;
  Matrix g_;
  Matrix a_;
  std::vector<unsigned> order_;  // candidate sets by increasing size
  std::vector<Factor> factors_;  // KKT factorization per active set, built on first use
  unsigned last_ = 0;
  int trials_ = 0;
};

}  // namespace dlmpc

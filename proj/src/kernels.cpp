#include "dlmpc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dlmpc {

Matrix pseudo_inverse(const Matrix& m) {
  if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff =
      sv(0) * static_cast<double>(std::max(m.rows(), m.cols())) * std::numeric_limits<double>::epsilon();
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv(k) > cutoff) inv(k) = 1.0 / sv(k);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

ColumnProjector::ColumnProjector(Matrix constraint, Matrix rhs) : z_(std::move(constraint)), b_(std::move(rhs)) {
  if (z_.rows() != b_.rows()) throw std::invalid_argument("ColumnProjector: constraint/rhs row mismatch");
  const Eigen::Index vars = z_.cols();
  if (z_.size() == 0) {
    z_pinv_ = Matrix::Zero(vars, z_.rows());
    null_basis_ = Matrix::Identity(vars, vars);
  } else {
    Eigen::BDCSVD<Matrix> svd(z_, Eigen::ComputeThinU | Eigen::ComputeFullV);
    const Vector& sv = svd.singularValues();
    const double cutoff =
        sv(0) * static_cast<double>(std::max(z_.rows(), z_.cols())) * std::numeric_limits<double>::epsilon();
    Vector inv = Vector::Zero(sv.size());
    double smallest = 0.0;
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
      if (sv(k) > cutoff) {
        inv(k) = 1.0 / sv(k);
        ++rank_;
        smallest = sv(k);
      }
    }
    condition_ = rank_ > 0 ? sv(0) / smallest : 0.0;
    const Matrix& v = svd.matrixV();
    z_pinv_ = v.leftCols(sv.size()) * inv.asDiagonal() * svd.matrixU().transpose();
    null_basis_ = v.rightCols(vars - rank_);
  }
  particular_ = z_pinv_ * b_;
  consistency_residual_ = (z_ * particular_ - b_).norm();
  consistent_ = consistency_residual_ <= 1e-10 * std::max(1.0, b_.norm());
}

Matrix project_affine(const ColumnProjector& proj, const Matrix& v) {
  if (v.rows() != proj.variables() || v.cols() != proj.rhs().cols()) {
    throw std::invalid_argument("project_affine: dimension mismatch");
  }
  if (!proj.consistent()) throw SolverError("project_affine: local achievability system is inconsistent");
  // Both forms equal V + Z^+ (b - Z V); use whichever has fewer flops.
  const Matrix& nb = proj.null_basis();
  if (nb.cols() < proj.rank()) return proj.particular() + nb * (nb.transpose() * v);
  return v + proj.pinv() * (proj.rhs() - proj.constraint() * v);
}

Polytope Polytope::unconstrained(Eigen::Index dim) {
  Polytope p;
  p.g = Matrix::Zero(0, dim);
  p.h = Vector::Zero(0);
  p.a_eq = Matrix::Zero(0, dim);
  p.b_eq = Vector::Zero(0);
  return p;
}

namespace {

Matrix kkt_matrix(const Matrix& h, const Matrix& a_eq) {
  const Eigen::Index n = h.rows();
  const Eigen::Index m = a_eq.rows();
  Matrix k = Matrix::Zero(n + m, n + m);
  k.topLeftCorner(n, n) = h;
  k.topRightCorner(n, m) = a_eq.transpose();
  k.bottomLeftCorner(m, n) = a_eq;
  return k;
}

int numeric_rank(const Matrix& m) {
  if (m.size() == 0) return 0;
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  qr.setThreshold(static_cast<double>(std::max(m.rows(), m.cols())) * std::numeric_limits<double>::epsilon());
  return static_cast<int>(qr.rank());
}

void factor_kkt(Eigen::PartialPivLU<Matrix>& lu, const Matrix& k, const Matrix& a_eq) {
  lu.compute(k);
  // The rcond estimate alone misses exactly zero pivots.
  const Vector pivots = lu.matrixLU().diagonal().cwiseAbs();
  if (lu.rcond() > 1e-13 && pivots.minCoeff() > 1e-13 * pivots.maxCoeff()) return;
  const int kkt_rank = numeric_rank(k);
  const int a_rank = numeric_rank(a_eq);
  std::ostringstream msg;
  msg << "singular KKT system: rank " << kkt_rank << " of " << k.rows() << ", constraint rank " << a_rank << " of "
      << a_eq.rows();
  throw SingularKktError(msg.str(), kkt_rank, static_cast<int>(k.rows()), a_rank, static_cast<int>(a_eq.rows()));
}

}  // namespace

EqQpFactor::EqQpFactor(const Matrix& h, const Matrix& a_eq) : dim_(h.rows()), eqs_(a_eq.rows()) {
  if (h.rows() != h.cols()) throw std::invalid_argument("EqQpFactor: H must be square");
  if (eqs_ > 0 && a_eq.cols() != dim_) throw std::invalid_argument("EqQpFactor: Aeq column mismatch");
  if (dim_ + eqs_ == 0) return;
  const Matrix a = eqs_ > 0 ? a_eq : Matrix::Zero(0, dim_);
  factor_kkt(lu_, kkt_matrix(h, a), a);
}

Vector EqQpFactor::solve(const Vector& g, const Vector& b_eq) const {
  if (g.size() != dim_ || b_eq.size() != eqs_) throw std::invalid_argument("EqQpFactor::solve: size mismatch");
  if (dim_ + eqs_ == 0) return Vector::Zero(0);
  Vector rhs(dim_ + eqs_);
  rhs.head(dim_) = -g;
  rhs.tail(eqs_) = b_eq;
  const Vector sol = lu_.solve(rhs);
  return sol.head(dim_);
}

Vector solve_eq_qp(const Matrix& h, const Vector& g, const Matrix& a_eq, const Vector& b_eq) {
  const Eigen::Index n = h.rows();
  const Matrix a = a_eq.rows() > 0 ? a_eq : Matrix::Zero(0, n);
  const Vector b = a_eq.rows() > 0 ? b_eq : Vector::Zero(0);
  if (h.rows() != h.cols() || a.cols() != n || b.size() != a.rows() || g.size() != n) {
    throw std::invalid_argument("solve_eq_qp: dimension mismatch");
  }
  const Eigen::Index m = a.rows();
  if (n + m == 0) return Vector::Zero(0);
  Vector rhs(n + m);
  rhs.head(n) = -g;
  rhs.tail(m) = b;
  const Matrix k = kkt_matrix(h, a);
  Eigen::PartialPivLU<Matrix> lu;
  factor_kkt(lu, k, a);
  Vector sol = lu.solve(rhs);
  // One refinement step keeps the KKT residual at the rounding floor.
  sol += lu.solve(rhs - k * sol);
  const double residual = (k * sol - rhs).lpNorm<Eigen::Infinity>();
  const double scale = std::max({1.0, rhs.lpNorm<Eigen::Infinity>(), k.lpNorm<Eigen::Infinity>() * sol.lpNorm<Eigen::Infinity>()});
  if (residual > 1e-9 * scale) {
    std::ostringstream msg;
    msg << "solve_eq_qp: KKT residual " << residual << " above tolerance";
    throw SolverError(msg.str());
  }
  return sol.head(n);
}

QpSolver::QpSolver(const Matrix& h, const Matrix& g_ineq, const Matrix& a_eq, QpSettings settings)
    : settings_(settings), h_(h), eqs_(a_eq.rows()) {
  const Eigen::Index n = h.rows();
  if (h.cols() != n) throw std::invalid_argument("QpSolver: H must be square");
  if (g_ineq.rows() > 0 && g_ineq.cols() != n) throw std::invalid_argument("QpSolver: G column mismatch");
  if (a_eq.rows() > 0 && a_eq.cols() != n) throw std::invalid_argument("QpSolver: Aeq column mismatch");
  if (settings_.rho <= 0 || settings_.sigma <= 0) throw std::invalid_argument("QpSolver: penalties must be positive");
  const Eigen::Index m = a_eq.rows() + g_ineq.rows();
  c_.resize(m, n);
  if (a_eq.rows() > 0) c_.topRows(a_eq.rows()) = a_eq;
  if (g_ineq.rows() > 0) c_.bottomRows(g_ineq.rows()) = g_ineq;
  rho_ = Vector::Constant(m, settings_.rho);
  rho_.head(eqs_).setConstant(1e3 * settings_.rho);
  Matrix k = h_ + settings_.sigma * Matrix::Identity(n, n);
  k.noalias() += c_.transpose() * rho_.asDiagonal() * c_;
  kkt_.compute(k);
  if (kkt_.info() != Eigen::Success) throw SolverError("QpSolver: reduced KKT matrix is not positive definite");
  reset();
}

void QpSolver::reset() {
  z_ = Vector::Zero(h_.rows());
  w_ = Vector::Zero(c_.rows());
  y_ = Vector::Zero(c_.rows());
}

bool QpSolver::try_polish(const Vector& g, const Vector& h_ineq, const Vector& b_eq, QpResult& out) const {
  const Eigen::Index n = h_.rows();
  const Eigen::Index m_in = c_.rows() - eqs_;
  std::vector<Eigen::Index> active;
  for (Eigen::Index k = 0; k < m_in; ++k) {
    const Eigen::Index r = eqs_ + k;
    if (h_ineq(k) - w_(r) < y_(r)) active.push_back(k);
  }
  const Eigen::Index m = eqs_ + static_cast<Eigen::Index>(active.size());
  Matrix a(m, n);
  Vector b(m);
  a.topRows(eqs_) = c_.topRows(eqs_);
  b.head(eqs_) = b_eq;
  for (std::size_t k = 0; k < active.size(); ++k) {
    a.row(eqs_ + static_cast<Eigen::Index>(k)) = c_.row(eqs_ + active[k]);
    b(eqs_ + static_cast<Eigen::Index>(k)) = h_ineq(active[k]);
  }
  const Matrix k = kkt_matrix(h_, a);
  Eigen::FullPivLU<Matrix> lu(k);
  if (!lu.isInvertible()) return false;
  Vector rhs(n + m);
  rhs.head(n) = -g;
  rhs.tail(m) = b;
  Vector sol = lu.solve(rhs);
  sol += lu.solve(rhs - k * sol);
  const Vector z = sol.head(n);
  const Vector lambda = sol.tail(m);
  const double tol = settings_.eps_abs;
  Vector y = Vector::Zero(c_.rows());
  y.head(eqs_) = lambda.head(eqs_);
  for (std::size_t k2 = 0; k2 < active.size(); ++k2) {
    const double mult = lambda(eqs_ + static_cast<Eigen::Index>(k2));
    if (mult < -tol) return false;
    y(eqs_ + active[k2]) = std::max(mult, 0.0);
  }
  const Vector cz = c_ * z;
  double primal = 0.0;
  if (eqs_ > 0) primal = (cz.head(eqs_) - b_eq).lpNorm<Eigen::Infinity>();
  for (Eigen::Index k2 = 0; k2 < m_in; ++k2) primal = std::max(primal, cz(eqs_ + k2) - h_ineq(k2));
  if (primal > tol) return false;
  const double dual = (h_ * z + g + c_.transpose() * y).lpNorm<Eigen::Infinity>();
  if (dual > tol) return false;
  out.z = z;
  out.y_eq = y.head(eqs_);
  out.y_ineq = y.tail(m_in);
  out.primal_residual = primal;
  out.dual_residual = dual;
  out.polished = true;
  return true;
}

QpResult QpSolver::solve(const Vector& g, const Vector& h_ineq, const Vector& b_eq) {
  const Eigen::Index n = h_.rows();
  const Eigen::Index m = c_.rows();
  const Eigen::Index m_in = m - eqs_;
  if (g.size() != n || h_ineq.size() != m_in || b_eq.size() != eqs_) {
    throw std::invalid_argument("QpSolver::solve: vector size mismatch");
  }
  QpResult out;
  if (m == 0) {
    // Unconstrained: a single KKT solve.
    out.z = solve_eq_qp(h_, g, Matrix::Zero(0, n), Vector::Zero(0));
    out.y_eq = Vector::Zero(0);
    out.y_ineq = Vector::Zero(0);
    z_ = out.z;
    return out;
  }

  auto project = [&](Vector& v) {
    v.head(eqs_) = b_eq;
    for (Eigen::Index k = 0; k < m_in; ++k) v(eqs_ + k) = std::min(v(eqs_ + k), h_ineq(k));
  };

  // Warm start: previous iterate with the constraint copy re-projected onto the new bounds.
  project(w_);

  Vector cz(m);
  Vector prev_y = y_;
  double primal = 0.0;
  double dual = 0.0;
  int last_polish = -1;
  for (int it = 1; it <= settings_.max_iter; ++it) {
    const Vector rhs = settings_.sigma * z_ - g + c_.transpose() * (rho_.cwiseProduct(w_) - y_);
    z_ = kkt_.solve(rhs);
    cz.noalias() = c_ * z_;
    Vector w_new = cz + y_.cwiseQuotient(rho_);
    project(w_new);
    prev_y = y_;
    y_ += rho_.cwiseProduct(cz - w_new);
    w_ = w_new;

    if (it % settings_.check_every != 0 && it != 1) continue;
    primal = (cz - w_).lpNorm<Eigen::Infinity>();
    dual = (h_ * z_ + g + c_.transpose() * y_).lpNorm<Eigen::Infinity>();
    if (primal <= settings_.eps_abs && dual <= settings_.eps_abs) {
      out.z = z_;
      out.y_eq = y_.head(eqs_);
      out.y_ineq = y_.tail(m_in);
      out.iterations = it;
      out.primal_residual = primal;
      out.dual_residual = dual;
      return out;
    }
    if (settings_.polish && std::max(primal, dual) < 1e-3 && it - last_polish >= 25) {
      last_polish = it;
      if (try_polish(g, h_ineq, b_eq, out)) {
        out.iterations = it;
        z_ = out.z;
        y_.head(eqs_) = out.y_eq;
        y_.tail(m_in) = out.y_ineq;
        w_ = c_ * z_;
        project(w_);
        return out;
      }
    }

    // Primal infeasibility certificate from the dual increment.
    const Vector dy = y_ - prev_y;
    const double dy_norm = dy.lpNorm<Eigen::Infinity>();
    if (dy_norm > 1e-10) {
      const double eps = settings_.eps_infeasible * dy_norm;
      bool signs_ok = true;
      double support = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) {
        if (k < eqs_) {
          support += b_eq(k) * dy(k);
        } else if (dy(k) < -eps) {
          signs_ok = false;
          break;
        } else {
          support += h_ineq(k - eqs_) * std::max(dy(k), 0.0);
        }
      }
      if (signs_ok && (c_.transpose() * dy).lpNorm<Eigen::Infinity>() <= eps && support < -eps) {
        reset();
        throw InfeasibleError("solve_qp: primal infeasibility certificate found");
      }
    }
  }
  if (settings_.polish && try_polish(g, h_ineq, b_eq, out)) {
    out.iterations = settings_.max_iter;
    return out;
  }
  std::ostringstream msg;
  msg << "solve_qp: iteration limit " << settings_.max_iter << " reached (primal " << primal << ", dual " << dual
      << ")";
  throw IterationLimitError(msg.str(), primal, dual);
}

Vector solve_qp(const Matrix& h, const Vector& g, const Polytope& polytope, const QpSettings& settings) {
  const Eigen::Index n = h.rows();
  const Matrix gi = polytope.g.rows() > 0 ? polytope.g : Matrix::Zero(0, n);
  const Matrix ae = polytope.a_eq.rows() > 0 ? polytope.a_eq : Matrix::Zero(0, n);
  if (polytope.h.size() != gi.rows() || polytope.b_eq.size() != ae.rows()) {
    throw std::invalid_argument("solve_qp: polytope vector size mismatch");
  }
  if (gi.rows() == 0) return solve_eq_qp(h, g, ae, polytope.b_eq);
  QpSolver solver(h, gi, ae, settings);
  return solver.solve(g, polytope.h, polytope.b_eq).z;
}

ActiveSetQp::ActiveSetQp(const Matrix& h, const Matrix& g_ineq, const Matrix& a_eq)
    : h_(h), g_(g_ineq), a_(a_eq) {
  if (!suitable(h, g_ineq, a_eq)) throw std::invalid_argument("ActiveSetQp: problem not suited to active-set search");
  const auto m = static_cast<unsigned>(g_.rows());
  order_.resize(std::size_t{1} << m);
  for (unsigned s = 0; s < order_.size(); ++s) order_[s] = s;
  factors_.resize(order_.size());
  std::stable_sort(order_.begin(), order_.end(),
                   [](unsigned a, unsigned b) { return __builtin_popcount(a) < __builtin_popcount(b); });
}

bool ActiveSetQp::suitable(const Matrix& h, const Matrix& g_ineq, const Matrix& a_eq) {
  if (g_ineq.rows() > kMaxInequalities || h.rows() == 0) return false;
  if (Eigen::LLT<Matrix>(h).info() != Eigen::Success) return false;
  if (a_eq.rows() > 0 && Eigen::FullPivLU<Matrix>(a_eq).rank() < a_eq.rows()) return false;
  return true;
}

bool ActiveSetQp::try_set(unsigned set, const Vector& g, const Vector& h_ineq, const Vector& b_eq, Vector& z) {
  const Eigen::Index n = h_.rows();
  const Eigen::Index eqs = a_.rows();
  std::vector<Eigen::Index> active;
  for (Eigen::Index k = 0; k < g_.rows(); ++k) {
    if (set & (1u << k)) active.push_back(k);
  }
  const Eigen::Index size = n + eqs + static_cast<Eigen::Index>(active.size());
  Factor& f = factors_[set];
  if (!f.built) {
    Matrix kkt = Matrix::Zero(size, size);
    kkt.topLeftCorner(n, n) = h_;
    if (eqs > 0) {
      kkt.block(n, 0, eqs, n) = a_;
      kkt.block(0, n, n, eqs) = a_.transpose();
    }
    for (std::size_t k = 0; k < active.size(); ++k) {
      const Eigen::Index row = n + eqs + static_cast<Eigen::Index>(k);
      kkt.block(row, 0, 1, n) = g_.row(active[k]);
      kkt.block(0, row, n, 1) = g_.row(active[k]).transpose();
    }
    f.lu.compute(kkt);
    f.invertible = f.lu.isInvertible();
    f.built = true;
  }
  if (!f.invertible) return false;
  Vector rhs(size);
  rhs.head(n) = -g;
  rhs.segment(n, eqs) = b_eq;
  for (std::size_t k = 0; k < active.size(); ++k) rhs(n + eqs + static_cast<Eigen::Index>(k)) = h_ineq(active[k]);
  const Vector sol = f.lu.solve(rhs);
  const double scale = 1.0 + sol.lpNorm<Eigen::Infinity>() + h_ineq.lpNorm<Eigen::Infinity>();
  const double tol = 1e-11 * scale;
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (sol(n + eqs + static_cast<Eigen::Index>(k)) < -tol) return false;
  }
  z = sol.head(n);
  return ((g_ * z - h_ineq).array() <= tol).all();
}

Vector ActiveSetQp::solve(const Vector& g, const Vector& h_ineq, const Vector& b_eq) {
  if (g.size() != h_.rows() || h_ineq.size() != g_.rows() || b_eq.size() != a_.rows()) {
    throw std::invalid_argument("ActiveSetQp::solve: vector size mismatch");
  }
  Vector z;
  trials_ = 1;
  if (try_set(last_, g, h_ineq, b_eq, z)) return z;
  // One constraint entering or leaving is the common change between calls.
  const auto m = static_cast<unsigned>(g_.rows());
  for (unsigned k = 0; k < m; ++k) {
    const unsigned set = last_ ^ (1u << k);
    ++trials_;
    if (try_set(set, g, h_ineq, b_eq, z)) {
      last_ = set;
      return z;
    }
  }
  for (unsigned set : order_) {
    if (__builtin_popcount(set ^ last_) <= 1) continue;
    ++trials_;
    if (try_set(set, g, h_ineq, b_eq, z)) {
      last_ = set;
      return z;
    }
  }
  throw InfeasibleError("ActiveSetQp: no active set satisfies the optimality conditions");
}

}  // namespace dlmpc

#include "dlmpc/local_qp.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace dlmpc {

SliceLayout::SliceLayout(std::vector<int> rows_in, std::vector<std::vector<int>> cols_in)
    : rows(std::move(rows_in)), cols(std::move(cols_in)) {
  if (rows.size() != cols.size()) throw std::invalid_argument("SliceLayout: one column set per row required");
  offsets.assign(rows.size() + 1, 0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    offsets[k + 1] = offsets[k] + static_cast<Eigen::Index>(cols[k].size());
  }
}

namespace {

struct DisjointSets {
  explicit DisjointSets(Eigen::Index n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), Eigen::Index{0});
  }
  Eigen::Index find(Eigen::Index v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  }
  void unite(Eigen::Index a, Eigen::Index b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<Eigen::Index> parent;
};

Matrix select(const Matrix& m, const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(rows[r], cols[c]);
    }
  }
  return out;
}

Vector select(const Vector& v, const std::vector<Eigen::Index>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(idx[k]);
  return out;
}

constexpr double kEmptyRowTolerance = 1e-9;

}  // namespace

LocalQp::LocalQp(const Matrix& p, const Matrix& g, const Matrix& a, const QpSettings& settings)
    : dim_(p.rows()), ineqs_(g.rows()), eqs_(a.rows()) {
  if (p.cols() != dim_ || (ineqs_ > 0 && g.cols() != dim_) || (eqs_ > 0 && a.cols() != dim_)) {
    throw std::invalid_argument("LocalQp: dimension mismatch");
  }
  DisjointSets sets(dim_);
  for (Eigen::Index r = 0; r < dim_; ++r) {
    for (Eigen::Index c = r + 1; c < dim_; ++c) {
      if (p(r, c) != 0.0 || p(c, r) != 0.0) sets.unite(r, c);
    }
  }
  auto link_rows = [&](const Matrix& m, std::vector<Eigen::Index>& empty) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      Eigen::Index first = -1;
      for (Eigen::Index c = 0; c < dim_; ++c) {
        if (m(r, c) == 0.0) continue;
        if (first < 0) {
          first = c;
        } else {
          sets.unite(first, c);
        }
      }
      if (first < 0) empty.push_back(r);
    }
  };
  link_rows(g, empty_ineq_rows_);
  link_rows(a, empty_eq_rows_);

  std::vector<Eigen::Index> slot(static_cast<std::size_t>(dim_), -1);
  for (Eigen::Index v = 0; v < dim_; ++v) {
    const Eigen::Index root = sets.find(v);
    if (slot[root] < 0) {
      slot[root] = static_cast<Eigen::Index>(components_.size());
      components_.emplace_back();
    }
    components_[slot[root]].vars.push_back(v);
  }
  auto assign_rows = [&](const Matrix& m, bool inequality) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < dim_; ++c) {
        if (m(r, c) == 0.0) continue;
        auto& comp = components_[slot[sets.find(c)]];
        (inequality ? comp.ineq_rows : comp.eq_rows).push_back(r);
        break;
      }
    }
  };
  assign_rows(g, true);
  assign_rows(a, false);

  for (auto& comp : components_) {
    const Matrix pc = select(p, comp.vars, comp.vars);
    const Matrix ac = select(a, comp.eq_rows, comp.vars);
    const Matrix gc = select(g, comp.ineq_rows, comp.vars);
    if (comp.ineq_rows.empty()) {
      comp.direct = EqQpFactor(pc, ac);
    } else if (ActiveSetQp::suitable(pc, gc, ac)) {
      comp.uses_exact = true;
      comp.exact = ActiveSetQp(pc, gc, ac);
    } else {
      comp.uses_iterative = true;
      comp.iterative = QpSolver(pc, gc, ac, settings);
    }
  }
}

bool LocalQp::exact() const {
  return std::any_of(components_.begin(), components_.end(), [](const Component& c) { return c.uses_exact; });
}

bool LocalQp::iterative() const {
  return std::any_of(components_.begin(), components_.end(), [](const Component& c) { return c.uses_iterative; });
}

Vector LocalQp::solve(const Vector& c, const Vector& h, const Vector& b) {
  if (c.size() != dim_ || h.size() != ineqs_ || b.size() != eqs_) {
    throw std::invalid_argument("LocalQp::solve: vector size mismatch");
  }
  for (Eigen::Index r : empty_ineq_rows_) {
    if (h(r) < -kEmptyRowTolerance) throw InfeasibleError("local QP: constraint row without variables is violated");
  }
  for (Eigen::Index r : empty_eq_rows_) {
    if (std::abs(b(r)) > kEmptyRowTolerance) {
      throw InfeasibleError("local QP: equality row without variables is violated");
    }
  }
  last_iterations_ = 0;
  Vector w(dim_);
  for (auto& comp : components_) {
    const Vector cc = select(c, comp.vars);
    const Vector bc = select(b, comp.eq_rows);
    Vector wc;
    if (comp.uses_exact) {
      wc = comp.exact.solve(cc, select(h, comp.ineq_rows), bc);
    } else if (comp.uses_iterative) {
      const QpResult res = comp.iterative.solve(cc, select(h, comp.ineq_rows), bc);
      last_iterations_ += res.iterations;
      wc = res.z;
    } else {
      wc = comp.direct.solve(cc, bc);
    }
    for (std::size_t k = 0; k < comp.vars.size(); ++k) w(comp.vars[k]) = wc(static_cast<Eigen::Index>(k));
  }
  return w;
}

int RowProblemSpec::footprint_row(std::size_t k) const {
  return k < own.rows.size() ? own.rows[k] : foreign_rows.at(k - own.rows.size());
}

int RowProblemSpec::footprint_index(int row) const {
  const auto own_it = std::find(own.rows.begin(), own.rows.end(), row);
  if (own_it != own.rows.end()) return static_cast<int>(own_it - own.rows.begin());
  const auto it = std::lower_bound(foreign_rows.begin(), foreign_rows.end(), row);
  if (it != foreign_rows.end() && *it == row) {
    return static_cast<int>(own.rows.size() + static_cast<std::size_t>(it - foreign_rows.begin()));
  }
  return -1;
}

RowSubproblem::RowSubproblem(const RowProblemSpec& spec, const std::vector<Vector>& x0_slices, double rho,
                             double mu, const QpSettings& settings)
    : own_(spec.own), footprint_(spec.footprint_size()), x0_slices_(x0_slices), mu_(mu) {
  if (!(rho > 0.0)) throw std::invalid_argument("row subproblem: rho must be positive");
  if (mu < 0.0) throw std::invalid_argument("row subproblem: mu must be nonnegative");
  const std::size_t n_own = own_.rows.size();
  if (x0_slices.size() != n_own) throw std::invalid_argument("row subproblem: one x0 slice per own row required");
  if (spec.shared.size() != footprint_) throw std::invalid_argument("row subproblem: shared flags size mismatch");
  const auto fp = static_cast<Eigen::Index>(footprint_);

  directions_.resize(n_own);
  scale_.assign(n_own, 0.0);
  var_of_row_.assign(n_own, -1);
  Eigen::Index vars = 0;
  for (std::size_t k = 0; k < n_own; ++k) {
    if (x0_slices[k].size() != own_.row_size(k)) throw std::invalid_argument("row subproblem: x0 slice size mismatch");
    const double norm = x0_slices[k].norm();
    if (norm > 0.0) {
      scale_[k] = norm;
      directions_[k] = x0_slices[k] / norm;
      var_of_row_[k] = vars++;
    }
  }
  const Eigen::Index own_vars = vars;
  const auto n_foreign = static_cast<Eigen::Index>(spec.foreign_rows.size());
  vars += n_foreign;

  Matrix map = Matrix::Zero(fp, vars);
  for (std::size_t k = 0; k < n_own; ++k) {
    if (var_of_row_[k] >= 0) map(static_cast<Eigen::Index>(k), var_of_row_[k]) = scale_[k];
  }
  for (Eigen::Index f = 0; f < n_foreign; ++f) map(static_cast<Eigen::Index>(n_own) + f, own_vars + f) = 1.0;

  Matrix hessian = Matrix::Zero(fp, fp);
  gradient_ = Vector::Zero(fp);
  for (const auto& term : spec.costs) {
    const auto size = static_cast<Eigen::Index>(term.indices.size());
    if (term.weight.rows() != size || term.weight.cols() != size || term.linear.size() != size) {
      throw std::invalid_argument("row subproblem: cost term data has wrong shape");
    }
    std::vector<int> pos(term.indices.size());
    for (std::size_t a = 0; a < term.indices.size(); ++a) {
      pos[a] = spec.footprint_index(term.indices[a]);
      if (pos[a] < 0) throw std::invalid_argument("row subproblem: cost term outside the footprint");
    }
    for (std::size_t a = 0; a < pos.size(); ++a) {
      gradient_(pos[a]) += term.linear(static_cast<Eigen::Index>(a));
      for (std::size_t b = 0; b < pos.size(); ++b) {
        hessian(pos[a], pos[b]) += 2.0 * term.weight(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
    }
  }
  consensus_weight_ = Vector::Zero(fp);
  for (std::size_t k = 0; k < footprint_; ++k) {
    if (spec.shared[k]) consensus_weight_(static_cast<Eigen::Index>(k)) = mu;
  }
  for (Eigen::Index f = 0; f < n_foreign; ++f) {
    if (!(consensus_weight_(static_cast<Eigen::Index>(n_own) + f) > 0.0)) {
      throw std::invalid_argument("row subproblem: foreign copies need a positive consensus penalty");
    }
  }

  std::size_t n_ineq = 0;
  for (const auto& c : spec.constraints) n_ineq += c.equality ? 0 : 1;
  Matrix g = Matrix::Zero(static_cast<Eigen::Index>(n_ineq), fp);
  h_ = Vector::Zero(static_cast<Eigen::Index>(n_ineq));
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(spec.constraints.size() - n_ineq), fp);
  b_ = Vector::Zero(a.rows());
  Eigen::Index gi = 0;
  Eigen::Index ai = 0;
  for (const auto& c : spec.constraints) {
    Matrix& target = c.equality ? a : g;
    const Eigen::Index row = c.equality ? ai++ : gi++;
    for (std::size_t k = 0; k < c.indices.size(); ++k) {
      const int pos = spec.footprint_index(c.indices[k]);
      if (pos < 0) throw std::invalid_argument("row subproblem: constraint outside the footprint");
      target(row, pos) += c.coeffs(static_cast<Eigen::Index>(k));
    }
    (c.equality ? b_ : h_)(row) = c.bound;
  }

  Matrix p = map.transpose() * (hessian + Matrix(consensus_weight_.asDiagonal())) * map;
  p.topLeftCorner(own_vars, own_vars).diagonal().array() += rho;
  qp_ = LocalQp(p, g * map, a * map, settings);
  map_ = map.sparseView();
  hessian_ = hessian.sparseView();
  g_ = g.sparseView();
  a_ = a.sparseView();
}

RowSolution RowSubproblem::solve(const Vector& v, const Vector& z, const Vector& y) {
  const auto fp = static_cast<Eigen::Index>(footprint_);
  if (v.size() != own_.size()) throw std::invalid_argument("row subproblem: V has wrong size");
  if (z.size() != fp || y.size() != fp) throw std::invalid_argument("row subproblem: consensus data has wrong size");
  const std::size_t n_own = own_.rows.size();
  Vector offset = Vector::Zero(fp);
  for (std::size_t k = 0; k < n_own; ++k) {
    offset(static_cast<Eigen::Index>(k)) = v.segment(own_.offsets[k], own_.row_size(k)).dot(x0_slices_[k]);
  }
  const Vector c = map_.transpose() *
                   (hessian_ * offset + gradient_ + consensus_weight_.cwiseProduct(offset - z + y));
  const Vector w = qp_.solve(c, h_ - g_ * offset, b_ - a_ * offset);

  RowSolution out;
  out.footprint = map_ * w + offset;
  out.phi = v;
  for (std::size_t k = 0; k < n_own; ++k) {
    if (var_of_row_[k] < 0) continue;
    out.phi.segment(own_.offsets[k], own_.row_size(k)) += w(var_of_row_[k]) * directions_[k];
  }
  return out;
}

}  // namespace dlmpc

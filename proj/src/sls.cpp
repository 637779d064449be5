#include "dlmpc/sls.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace dlmpc {

HorizonSpec::HorizonSpec(int steps, SubsystemPartition partition)
    : steps_(steps), partition_(std::move(partition)) {
  if (steps_ < 1) throw std::invalid_argument("horizon: at least one prediction step is required");
}

HorizonSpec::RowInfo HorizonSpec::row_info(int row) const {
  if (row < 0 || row >= rows()) throw std::out_of_range("horizon: row index out of range");
  if (row < x_rows()) {
    const int k = row % n();
    return {Kind::state, row / n(), k, partition_.state_owner(k)};
  }
  const int r = row - x_rows();
  const int k = r % p();
  return {Kind::input, r / p(), k, partition_.input_owner(k)};
}

LocalityMask::LocalityMask(const InterconnectionGraph& graph, int d, const HorizonSpec& horizon)
    : d_(d), horizon_(horizon) {
  const int N = horizon.partition().count();
  if (graph.vertices() != N) throw std::invalid_argument("mask: graph and partition disagree on N");
  if (d < 0) throw std::invalid_argument("mask: radius must be non-negative");
  x_blocks_.assign(static_cast<std::size_t>(N) * N, false);
  u_blocks_.assign(static_cast<std::size_t>(N) * N, false);
  for (int j = 0; j < N; ++j) {
    for (int i : d_outgoing(graph, j, d)) x_blocks_[static_cast<std::size_t>(i) * N + j] = true;
    for (int i : d_outgoing(graph, j, d + 1)) u_blocks_[static_cast<std::size_t>(i) * N + j] = true;
  }
}

bool LocalityMask::x_allowed(int row_subsystem, int col_subsystem) const {
  const int N = horizon_.partition().count();
  return x_blocks_.at(static_cast<std::size_t>(row_subsystem) * N + col_subsystem);
}

bool LocalityMask::u_allowed(int row_subsystem, int col_subsystem) const {
  const int N = horizon_.partition().count();
  return u_blocks_.at(static_cast<std::size_t>(row_subsystem) * N + col_subsystem);
}

bool LocalityMask::allowed(int row, int col) const {
  const auto info = horizon_.row_info(row);
  const int j = horizon_.partition().state_owner(col);
  return info.kind == HorizonSpec::Kind::state ? x_allowed(info.owner, j) : u_allowed(info.owner, j);
}

std::vector<int> LocalityMask::row_support(int row) const {
  const auto info = horizon_.row_info(row);
  const auto& part = horizon_.partition();
  std::vector<int> cols;
  for (int j = 0; j < part.count(); ++j) {
    const bool ok = info.kind == HorizonSpec::Kind::state ? x_allowed(info.owner, j) : u_allowed(info.owner, j);
    if (!ok) continue;
    for (int k = 0; k < part.state_dim(j); ++k) cols.push_back(part.state_offset(j) + k);
  }
  return cols;
}

std::vector<int> LocalityMask::column_support(int col) const {
  const auto& part = horizon_.partition();
  const int j = part.state_owner(col);
  std::vector<int> rows;
  for (int t = 0; t <= horizon_.steps(); ++t) {
    for (int i = 0; i < part.count(); ++i) {
      if (!x_allowed(i, j)) continue;
      for (int k = 0; k < part.state_dim(i); ++k) rows.push_back(horizon_.x_row(t, part.state_offset(i) + k));
    }
  }
  for (int t = 0; t < horizon_.steps(); ++t) {
    for (int i = 0; i < part.count(); ++i) {
      if (!u_allowed(i, j)) continue;
      for (int k = 0; k < part.input_dim(i); ++k) rows.push_back(horizon_.u_row(t, part.input_offset(i) + k));
    }
  }
  return rows;
}

std::size_t LocalityMask::nonzeros() const {
  std::size_t total = 0;
  for (int c = 0; c < horizon_.n(); ++c) total += column_support(c).size();
  return total;
}

Achievability assemble_achievability(const SystemModel& model, const HorizonSpec& horizon) {
  if (!(model.partition() == horizon.partition())) {
    throw std::invalid_argument("achievability: model and horizon partitions differ");
  }
  const int n = horizon.n();
  const int p = horizon.p();
  const int T = horizon.steps();
  const Matrix& A = model.dense_a();
  const Matrix& B = model.dense_b();
  std::vector<Eigen::Triplet<double>> triplets;
  for (int q = 0; q < n; ++q) triplets.emplace_back(horizon.x_row(0, q), horizon.x_row(0, q), 1.0);
  for (int t = 0; t < T; ++t) {
    for (int q = 0; q < n; ++q) {
      const int row = horizon.x_row(t + 1, q);
      triplets.emplace_back(row, horizon.x_row(t + 1, q), 1.0);
      for (int k = 0; k < n; ++k) {
        if (A(q, k) != 0.0) triplets.emplace_back(row, horizon.x_row(t, k), -A(q, k));
      }
      for (int k = 0; k < p; ++k) {
        if (B(q, k) != 0.0) triplets.emplace_back(row, horizon.u_row(t, k), -B(q, k));
      }
    }
  }
  Achievability ach;
  ach.z_ab.resize(horizon.x_rows(), horizon.rows());
  ach.z_ab.setFromTriplets(triplets.begin(), triplets.end());
  ach.e1 = Matrix::Zero(horizon.x_rows(), n);
  ach.e1.topRows(n).setIdentity();
  return ach;
}

double achievability_residual(const Achievability& ach, const Matrix& phi) {
  if (phi.rows() != ach.z_ab.cols() || phi.cols() != ach.e1.cols()) {
    throw std::invalid_argument("achievability: response has wrong shape");
  }
  return (ach.z_ab * phi - ach.e1).norm();
}

LocalityMask build_locality_mask(const InterconnectionGraph& graph, int d, const HorizonSpec& horizon) {
  return LocalityMask(graph, d, horizon);
}

LocalizabilityReport check_localizability(const SystemModel& model, int d, const HorizonSpec& horizon,
                                          double tolerance) {
  const auto graph = build_interconnection_graph(model);
  const LocalityMask mask(graph, d, horizon);
  const Achievability ach = assemble_achievability(model, horizon);
  const auto& part = horizon.partition();
  const double scale = ach.e1.norm();

  LocalizabilityReport report;
  report.feasible = true;
  for (int j = 0; j < part.count(); ++j) {
    if (part.state_dim(j) == 0) continue;
    const int first_col = part.state_offset(j);
    const std::vector<int> support = mask.column_support(first_col);

    // constraint rows touching the support
    std::vector<int> touched;
    for (int v : support) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(ach.z_ab, v); it; ++it) {
        touched.push_back(static_cast<int>(it.row()));
      }
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    std::unordered_map<int, int> local_row;
    for (std::size_t r = 0; r < touched.size(); ++r) local_row[touched[r]] = static_cast<int>(r);

    Matrix z = Matrix::Zero(static_cast<Eigen::Index>(touched.size()), static_cast<Eigen::Index>(support.size()));
    for (std::size_t c = 0; c < support.size(); ++c) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(ach.z_ab, support[c]); it; ++it) {
        z(local_row.at(static_cast<int>(it.row())), static_cast<Eigen::Index>(c)) = it.value();
      }
    }
    Matrix rhs(z.rows(), part.state_dim(j));
    for (std::size_t r = 0; r < touched.size(); ++r) {
      rhs.row(static_cast<Eigen::Index>(r)) = ach.e1.block(touched[r], first_col, 1, part.state_dim(j));
    }
    const Eigen::ColPivHouseholderQR<Matrix> qr(z);
    const Matrix sol = qr.solve(rhs);
    const Matrix res = z * sol - rhs;
    for (int c = 0; c < part.state_dim(j); ++c) {
      const double rel = res.col(c).norm() / scale;
      if (rel > report.worst_residual || report.worst_column < 0) {
        report.worst_residual = rel;
        report.worst_column = first_col + c;
      }
    }
  }
  report.feasible = report.worst_residual <= tolerance;
  return report;
}

PartitionSets build_partitions(const LocalityMask& mask, const SubsystemPartition& partition) {
  const HorizonSpec& h = mask.horizon();
  if (!(h.partition() == partition)) throw std::invalid_argument("partitions: mask built for another partition");
  const int N = partition.count();
  PartitionSets sets(static_cast<std::size_t>(N));
  auto append_state_cols = [&](std::vector<int>& out, int j) {
    for (int k = 0; k < partition.state_dim(j); ++k) out.push_back(partition.state_offset(j) + k);
  };
  for (int i = 0; i < N; ++i) {
    SubsystemSets& s = sets[static_cast<std::size_t>(i)];
    for (int t = 0; t <= h.steps(); ++t) {
      for (int k = 0; k < partition.state_dim(i); ++k) s.rows.push_back(h.x_row(t, partition.state_offset(i) + k));
    }
    for (int t = 0; t < h.steps(); ++t) {
      for (int k = 0; k < partition.input_dim(i); ++k) s.rows.push_back(h.u_row(t, partition.input_offset(i) + k));
    }
    append_state_cols(s.cols, i);

    for (int j = 0; j < N; ++j) {
      const bool via_x = mask.x_allowed(i, j) && partition.state_dim(i) > 0;
      const bool via_u = mask.u_allowed(i, j) && partition.input_dim(i) > 0;
      if (mask.x_allowed(i, j)) append_state_cols(s.x_row_cols, j);
      if (mask.u_allowed(i, j)) append_state_cols(s.u_row_cols, j);
      if ((via_x || via_u) && partition.state_dim(j) > 0) {
        append_state_cols(s.row_support, j);
        s.row_peers.push_back(j);
      }
    }
    if (partition.state_dim(i) > 0) {
      s.col_support = mask.column_support(partition.state_offset(i));
      for (int r = 0; r < N; ++r) {
        const bool via_x = mask.x_allowed(r, i) && partition.state_dim(r) > 0;
        const bool via_u = mask.u_allowed(r, i) && partition.input_dim(r) > 0;
        if (via_x || via_u) s.col_peers.push_back(r);
      }
    }
  }
  return sets;
}

Trajectory reconstruct_trajectory(const ResponseColumn& response, const Vector& x0) {
  const HorizonSpec& h = response.horizon;
  if (response.phi.rows() != h.rows() || response.phi.cols() != h.n()) {
    throw std::invalid_argument("reconstruct: response has wrong shape");
  }
  if (x0.size() != h.n()) throw std::invalid_argument("reconstruct: x0 has wrong dimension");
  const Vector y = response.phi * x0;
  Trajectory traj;
  traj.x = Eigen::Map<const Matrix>(y.data(), h.n(), h.steps() + 1);
  traj.u = Eigen::Map<const Matrix>(y.data() + h.x_rows(), h.p(), h.steps());
  return traj;
}

FullResponse complete_full_response(const SystemModel& model, const HorizonSpec& horizon, const Matrix& phi_u) {
  const int n = horizon.n();
  const int p = horizon.p();
  const int T = horizon.steps();
  if (phi_u.rows() != horizon.u_rows() || phi_u.cols() != horizon.x_rows()) {
    throw std::invalid_argument("full response: Phi_u has wrong shape");
  }
  FullResponse full{horizon, Matrix::Zero(horizon.x_rows(), horizon.x_rows()), phi_u};
  const Matrix& A = model.dense_a();
  const Matrix& B = model.dense_b();
  for (int tau = 0; tau <= T; ++tau) {
    for (int t = 0; t < tau && t < T; ++t) full.phi_u.block(t * p, tau * n, p, n).setZero();
    full.phi_x.block(tau * n, tau * n, n, n).setIdentity();
    for (int t = tau; t < T; ++t) {
      full.phi_x.block((t + 1) * n, tau * n, n, n) =
          A * full.phi_x.block(t * n, tau * n, n, n) + B * full.phi_u.block(t * p, tau * n, p, n);
    }
  }
  return full;
}

double full_achievability_residual(const SystemModel& model, const FullResponse& full) {
  const HorizonSpec& h = full.horizon;
  const Achievability ach = assemble_achievability(model, h);
  Matrix stacked(h.rows(), h.x_rows());
  stacked << full.phi_x, full.phi_u;
  return (ach.z_ab * stacked - Matrix::Identity(h.x_rows(), h.x_rows())).norm();
}

Trajectory realize_controller(const SystemModel& model, const FullResponse& full, const Vector& w) {
  const HorizonSpec& h = full.horizon;
  const int n = h.n();
  const int p = h.p();
  const int T = h.steps();
  if (w.size() != h.x_rows()) throw std::invalid_argument("realize: disturbance has wrong length");
  for (int t = 0; t <= T; ++t) {
    for (int tau = t + 1; tau <= T; ++tau) {
      if (!full.phi_x.block(t * n, tau * n, n, n).isZero(0.0) ||
          (t < T && !full.phi_u.block(t * p, tau * n, p, n).isZero(0.0))) {
        throw std::invalid_argument("realize: response is not causal (block (" + std::to_string(t) + "," +
                                    std::to_string(tau) + ") nonzero)");
      }
    }
  }
  Trajectory traj{Matrix::Zero(n, T + 1), Matrix::Zero(p, T)};
  Matrix w_hat = Matrix::Zero(n, T + 1);
  for (int t = 0; t <= T; ++t) {
    Vector x = w.segment(t * n, n);
    if (t > 0) x += model.dense_a() * traj.x.col(t - 1) + model.dense_b() * traj.u.col(t - 1);
    traj.x.col(t) = x;
    // nominal state from the strictly causal part of Phi_x
    Vector x_hat = Vector::Zero(n);
    for (int tau = 0; tau < t; ++tau) x_hat += full.phi_x.block(t * n, tau * n, n, n) * w_hat.col(tau);
    w_hat.col(t) = x - x_hat;
    if (t < T) {
      Vector u = Vector::Zero(p);
      for (int tau = 0; tau <= t; ++tau) u += full.phi_u.block(t * p, tau * n, p, n) * w_hat.col(tau);
      traj.u.col(t) = u;
    }
  }
  return traj;
}

std::string response_to_json(const ResponseColumn& response, const LocalityMask& mask) {
  const HorizonSpec& h = response.horizon;
  nlohmann::json doc;
  doc["format"] = "dlmpc-response";
  doc["steps"] = h.steps();
  doc["state_dims"] = h.partition().state_dims();
  doc["input_dims"] = h.partition().input_dims();
  doc["radius"] = mask.radius();
  nlohmann::json entries = nlohmann::json::array();
  for (int c = 0; c < h.n(); ++c) {
    for (int r : mask.column_support(c)) entries.push_back({r, c, response.phi(r, c)});
  }
  doc["entries"] = std::move(entries);
  return doc.dump();
}

ResponseColumn response_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  if (doc.value("format", std::string{}) != "dlmpc-response") {
    throw std::invalid_argument("response json: missing or unknown format tag");
  }
  HorizonSpec h(doc.at("steps").get<int>(), SubsystemPartition(doc.at("state_dims").get<std::vector<int>>(),
                                                              doc.at("input_dims").get<std::vector<int>>()));
  ResponseColumn response{h, Matrix::Zero(h.rows(), h.n())};
  for (const auto& e : doc.at("entries")) {
    const int r = e.at(0).get<int>();
    const int c = e.at(1).get<int>();
    if (r < 0 || c < 0 || r >= h.rows() || c >= h.n()) throw std::invalid_argument("response json: bad coordinate");
    response.phi(r, c) = e.at(2).get<double>();
  }
  return response;
}

}  // namespace dlmpc

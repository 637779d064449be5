#include <doctest.h>

#include <random>
#include <set>

#include "dlmpc/kernels.hpp"
#include "dlmpc/sls.hpp"

using namespace dlmpc;

namespace {

SystemModel scalar_model(double a, double b) {
  return SystemModel(SubsystemPartition({1}, {1}), Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b));
}

/// Minimum-norm achievable response restricted to the mask, computed by a
/// dense least-squares solve independent of the per-column localizability code.
Matrix masked_min_norm_response(const SystemModel& model, const LocalityMask& mask) {
  const HorizonSpec& h = mask.horizon();
  const Achievability ach = assemble_achievability(model, h);
  const Matrix z = Matrix(ach.z_ab);
  Matrix phi = Matrix::Zero(h.rows(), h.n());
  for (int col = 0; col < h.n(); ++col) {
    const auto rows = mask.column_support(col);
    Matrix zc(z.rows(), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) zc.col(static_cast<Eigen::Index>(k)) = z.col(rows[k]);
    const Vector sol = pseudo_inverse(zc) * ach.e1.col(col);
    for (std::size_t k = 0; k < rows.size(); ++k) phi(rows[k], col) = sol(static_cast<Eigen::Index>(k));
  }
  return phi;
}

SystemModel chain_model(int count) {
  SubsystemPartition part(std::vector<int>(count, 1), std::vector<int>(count, 1));
  Matrix a = Matrix::Zero(count, count);
  for (int i = 0; i < count; ++i) {
    a(i, i) = 1.0;
    if (i > 0) a(i, i - 1) = 0.4;
    if (i + 1 < count) a(i, i + 1) = 0.4;
  }
  return SystemModel(part, a, Matrix::Identity(count, count));
}

}  // namespace

TEST_CASE("horizon layout") {
  HorizonSpec h(3, SubsystemPartition({2, 1}, {1, 1}));
  CHECK(h.rows() == 4 * 3 + 3 * 2);
  CHECK(h.x_row(2, 1) == 7);
  CHECK(h.u_row(0, 1) == 13);
  const auto info = h.row_info(h.u_row(2, 1));
  CHECK(info.kind == HorizonSpec::Kind::input);
  CHECK(info.time == 2);
  CHECK(info.owner == 1);
  CHECK(h.row_info(h.x_row(3, 2)).owner == 1);
  CHECK_THROWS(HorizonSpec(0, SubsystemPartition({1}, {1})));
}

TEST_CASE("scalar achievability operator") {
  const SystemModel model = scalar_model(0.5, 1.0);
  HorizonSpec h(1, model.partition());
  const Achievability ach = assemble_achievability(model, h);
  Matrix expected(2, 3);
  expected << 1, 0, 0, -0.5, 1, -1;
  CHECK(Matrix(ach.z_ab) == expected);
  CHECK(ach.e1 == (Matrix(2, 1) << 1, 0).finished());
}

TEST_CASE("first block row forces identity") {
  const SystemModel model = build_benchmark_chain(3);
  HorizonSpec h(4, model.partition());
  const Achievability ach = assemble_achievability(model, h);
  const Matrix z = Matrix(ach.z_ab);
  CHECK(z.topLeftCorner(6, 6) == Matrix::Identity(6, 6));
  CHECK(z.topRightCorner(6, h.rows() - 6).isZero(0.0));
  CHECK(ach.e1.topRows(6) == Matrix::Identity(6, 6));
  CHECK(ach.e1.bottomRows(h.x_rows() - 6).isZero(0.0));
  CHECK_THROWS(achievability_residual(ach, Matrix::Zero(3, 3)));
}

TEST_CASE("locality mask on a chain") {
  const SystemModel model = chain_model(6);
  const auto graph = build_interconnection_graph(model);
  HorizonSpec h(2, model.partition());
  const LocalityMask d1 = build_locality_mask(graph, 1, h);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      CHECK(d1.x_allowed(i, j) == (std::abs(i - j) <= 1));
      CHECK(d1.u_allowed(i, j) == (std::abs(i - j) <= 2));
    }
  }
  const LocalityMask d0 = build_locality_mask(graph, 0, h);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      CHECK(d0.x_allowed(i, j) == (i == j));
      CHECK(d0.u_allowed(i, j) == (std::abs(i - j) <= 1));
    }
  }
  const LocalityMask dense = build_locality_mask(graph, 5, h);
  CHECK(dense.nonzeros() == static_cast<std::size_t>(h.rows() * h.n()));
  // Mask for d covers mask for smaller d, identically at every time block.
  for (int row = 0; row < h.rows(); ++row) {
    for (int col = 0; col < h.n(); ++col) {
      if (d0.allowed(row, col)) CHECK(d1.allowed(row, col));
      if (d1.allowed(row, col)) CHECK(dense.allowed(row, col));
    }
  }
}

TEST_CASE("partitions") {
  const SystemModel model = chain_model(3);
  const auto graph = build_interconnection_graph(model);
  HorizonSpec h(2, model.partition());
  const auto d1 = build_partitions(build_locality_mask(graph, 1, h), model.partition());
  CHECK(d1[1].row_support == std::vector<int>{0, 1, 2});
  const auto d0 = build_partitions(build_locality_mask(graph, 0, h), model.partition());
  CHECK(d0[0].x_row_cols == std::vector<int>{0});
  CHECK(d0[0].u_row_cols == std::vector<int>{0, 1});
  CHECK(d0[1].u_row_cols == std::vector<int>{0, 1, 2});
  const auto dense = build_partitions(build_locality_mask(graph, 2, h), model.partition());
  for (const auto& sets : dense) {
    CHECK(sets.row_support.size() == 3);
    CHECK(sets.col_support.size() == static_cast<std::size_t>(h.rows()));
  }
  for (const auto* parts : {&d0, &d1, &dense}) {
    std::multiset<int> rows;
    std::multiset<int> cols;
    for (std::size_t i = 0; i < parts->size(); ++i) {
      const auto& s = (*parts)[i];
      rows.insert(s.rows.begin(), s.rows.end());
      cols.insert(s.cols.begin(), s.cols.end());
      for (int c : s.cols) CHECK(std::find(s.row_support.begin(), s.row_support.end(), c) != s.row_support.end());
      for (int r : s.rows) CHECK(std::find(s.col_support.begin(), s.col_support.end(), r) != s.col_support.end());
    }
    CHECK(rows.size() == static_cast<std::size_t>(h.rows()));
    CHECK(std::set<int>(rows.begin(), rows.end()).size() == rows.size());
    CHECK(cols.size() == 3);
    CHECK(std::set<int>(cols.begin(), cols.end()).size() == 3);
  }
}

TEST_CASE("localizability reports") {
  const SystemModel bench = build_benchmark_chain(10);
  CHECK(check_localizability(bench, 1, HorizonSpec(5, bench.partition())).feasible);
  const SystemModel small = build_benchmark_chain(3);
  CHECK(check_localizability(small, 2, HorizonSpec(3, small.partition())).feasible);

  // Subsystem 1 pushes into subsystem 0 but only subsystem 1 has an input able
  // to cancel it locally; with d=0 the disturbance at 1 leaks into 0.
  SubsystemPartition part({1, 1}, {1, 1});
  Matrix a(2, 2);
  a << 0.5, 1.0, 0.0, 0.5;
  Matrix b = Matrix::Zero(2, 2);
  b(1, 1) = 1.0;
  const SystemModel crafted(part, a, b);
  HorizonSpec h(3, part);
  const auto report = check_localizability(crafted, 0, h);
  CHECK_FALSE(report.feasible);
  CHECK(report.worst_residual > 1e-3);
  CHECK(report.worst_column == 1);
  // Monotone in d.
  CHECK(check_localizability(crafted, 1, h).feasible);
  CHECK(check_localizability(crafted, 2, h).feasible);
}

TEST_CASE("oracle response satisfies the assembled operator") {
  const SystemModel model = build_benchmark_chain(2);
  HorizonSpec h(2, model.partition());
  const auto graph = build_interconnection_graph(model);
  const LocalityMask mask = build_locality_mask(graph, 1, h);
  const Matrix phi = masked_min_norm_response(model, mask);
  CHECK(achievability_residual(assemble_achievability(model, h), phi) <= 1e-10);
}

TEST_CASE("trajectory reconstruction") {
  const SystemModel model = build_benchmark_chain(2);
  HorizonSpec h(4, model.partition());
  const LocalityMask mask = build_locality_mask(build_interconnection_graph(model), 1, h);
  ResponseColumn response{h, masked_min_norm_response(model, mask)};
  const Trajectory zero = reconstruct_trajectory(response, Vector::Zero(4));
  CHECK(zero.x.isZero(0.0));
  CHECK(zero.u.isZero(0.0));
  const Vector x0 = (Vector(4) << 0.3, -0.7, 1.0, 0.2).finished();
  const Trajectory traj = reconstruct_trajectory(response, x0);
  CHECK((traj.x.col(0) - x0).norm() <= 1e-14);
  for (int t = 0; t < h.steps(); ++t) {
    CHECK((traj.x.col(t + 1) - model.step(traj.x.col(t), traj.u.col(t))).norm() <= 1e-10);
  }
  CHECK_THROWS(reconstruct_trajectory(response, Vector::Zero(3)));
}

TEST_CASE("full-response realization matches the closed-loop maps") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const SystemModel model = chain_model(2);
  HorizonSpec h(3, model.partition());
  Matrix phi_u = Matrix::Zero(h.u_rows(), h.x_rows());
  for (int r = 0; r < phi_u.rows(); ++r) {
    for (int c = 0; c < phi_u.cols(); ++c) phi_u(r, c) = dist(rng);
  }
  const FullResponse full = complete_full_response(model, h, phi_u);
  CHECK(full_achievability_residual(model, full) <= 1e-12);

  const Trajectory none = realize_controller(model, full, Vector::Zero(h.x_rows()));
  CHECK(none.x.isZero(0.0));
  CHECK(none.u.isZero(0.0));

  for (int trial = 0; trial < 5; ++trial) {
    Vector w(h.x_rows());
    for (int k = 0; k < w.size(); ++k) w(k) = dist(rng);
    const Trajectory traj = realize_controller(model, full, w);
    const Vector xs = full.phi_x * w;
    const Vector us = full.phi_u * w;
    for (int t = 0; t <= h.steps(); ++t) CHECK((traj.x.col(t) - xs.segment(t * 2, 2)).norm() <= 1e-9);
    for (int t = 0; t < h.steps(); ++t) CHECK((traj.u.col(t) - us.segment(t * 2, 2)).norm() <= 1e-9);
  }

  // Impulse at time zero reduces to the first block column.
  Vector w0 = Vector::Zero(h.x_rows());
  w0.head(2) << 0.4, -1.1;
  ResponseColumn first{h, Matrix(h.rows(), 2)};
  first.phi << full.phi_x.leftCols(2), full.phi_u.leftCols(2);
  const Trajectory a = realize_controller(model, full, w0);
  const Trajectory b = reconstruct_trajectory(first, w0.head(2));
  CHECK((a.x - b.x).norm() <= 1e-12);
  CHECK((a.u - b.u).norm() <= 1e-12);

  FullResponse acausal = full;
  acausal.phi_u(0, h.x_rows() - 1) = 1.0;
  CHECK_THROWS(realize_controller(model, acausal, w0));
}

TEST_CASE("response serialization round trip") {
  const SystemModel model = build_benchmark_chain(3);
  HorizonSpec h(2, model.partition());
  const LocalityMask mask = build_locality_mask(build_interconnection_graph(model), 1, h);
  ResponseColumn response{h, masked_min_norm_response(model, mask)};
  const ResponseColumn back = response_from_json(response_to_json(response, mask));
  CHECK(back.horizon.steps() == 2);
  CHECK(back.phi == response.phi);
}

#include <doctest.h>

#include <random>

#include "dlmpc/kernels.hpp"

using namespace dlmpc;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> dist;
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

double objective(const Matrix& h, const Vector& g, const Vector& z) { return 0.5 * z.dot(h * z) + g.dot(z); }

}  // namespace

TEST_CASE("pseudo-inverse basics") {
  CHECK(pseudo_inverse(Matrix::Identity(3, 3)).isApprox(Matrix::Identity(3, 3), 1e-15));
  Matrix d(2, 2);
  d << 2, 0, 0, 0;
  Matrix expected(2, 2);
  expected << 0.5, 0, 0, 0;
  CHECK((pseudo_inverse(d) - expected).norm() <= 1e-15);
  CHECK(pseudo_inverse(Matrix::Zero(0, 4)).rows() == 4);
}

TEST_CASE("pseudo-inverse Penrose identities") {
  std::mt19937_64 rng(3);
  const Matrix m = random_matrix(rng, 5, 3);
  const Matrix mp = pseudo_inverse(m);
  CHECK((mp * m - Matrix::Identity(3, 3)).norm() <= 1e-10);
  // Rank-deficient case: all four identities.
  const Matrix r = random_matrix(rng, 6, 2) * random_matrix(rng, 2, 5);
  const Matrix rp = pseudo_inverse(r);
  const double scale = r.norm();
  CHECK((r * rp * r - r).norm() <= 1e-10 * scale);
  CHECK((rp * r * rp - rp).norm() <= 1e-10 * rp.norm());
  CHECK(((r * rp).transpose() - r * rp).norm() <= 1e-10);
  CHECK(((rp * r).transpose() - rp * r).norm() <= 1e-10);
}

TEST_CASE("affine projection") {
  ColumnProjector proj((Matrix(1, 2) << 1, 1).finished(), Matrix::Ones(1, 1));
  CHECK(proj.consistent());
  CHECK(proj.rank() == 1);
  const Matrix out = project_affine(proj, Matrix::Zero(2, 1));
  CHECK(out(0, 0) == doctest::Approx(0.5));
  CHECK(out(1, 0) == doctest::Approx(0.5));
  const Matrix feasible = (Matrix(2, 1) << 0.25, 0.75).finished();
  CHECK((project_affine(proj, feasible) - feasible).norm() <= 1e-15);
  CHECK_THROWS(project_affine(proj, Matrix::Zero(3, 1)));
}

TEST_CASE("projection optimality by sampling") {
  std::mt19937_64 rng(9);
  const Matrix z = random_matrix(rng, 3, 7);
  const Matrix b = random_matrix(rng, 3, 2);
  ColumnProjector proj(z, b);
  CHECK(proj.consistent());
  CHECK(proj.condition() >= 1.0);
  const Matrix v = random_matrix(rng, 7, 2);
  const Matrix p = project_affine(proj, v);
  CHECK((z * p - b).norm() <= 1e-10);
  const Matrix null_basis = Eigen::FullPivLU<Matrix>(z).kernel();
  for (int k = 0; k < 100; ++k) {
    const Matrix w = p + null_basis * random_matrix(rng, static_cast<int>(null_basis.cols()), 2);
    CHECK((z * w - b).norm() <= 1e-9);
    CHECK((p - v).norm() <= (w - v).norm() + 1e-12);
  }
}

TEST_CASE("inconsistent projector is flagged") {
  Matrix z(2, 2);
  z << 1, 1, 1, 1;
  Matrix b(2, 1);
  b << 1, 2;
  ColumnProjector proj(z, b);
  CHECK_FALSE(proj.consistent());
  CHECK(proj.consistency_residual() > 0.1);
  CHECK_THROWS_AS(project_affine(proj, Matrix::Zero(2, 1)), SolverError);
}

TEST_CASE("equality QP examples") {
  // min u^2 s.t. u = 1
  Vector z = solve_eq_qp(Matrix::Constant(1, 1, 2.0), Vector::Zero(1), Matrix::Ones(1, 1), Vector::Ones(1));
  CHECK(z(0) == doctest::Approx(1.0));
  // min (1+u)^2 + u^2 = 2u^2 + 2u + 1
  z = solve_eq_qp(Matrix::Constant(1, 1, 4.0), Vector::Constant(1, 2.0), Matrix(0, 1), Vector(0));
  CHECK(z(0) == doctest::Approx(-0.5).epsilon(1e-14));
  z = solve_eq_qp(Matrix::Identity(3, 3), Vector::Zero(3), Matrix(0, 3), Vector(0));
  CHECK(z.isZero(0.0));
}

TEST_CASE("equality QP KKT residual and singular diagnostics") {
  std::mt19937_64 rng(21);
  const Matrix l = random_matrix(rng, 6, 6);
  const Matrix h = l * l.transpose();
  const Vector g = random_matrix(rng, 6, 1);
  const Matrix a = random_matrix(rng, 2, 6);
  const Vector b = random_matrix(rng, 2, 1);
  const Vector z = solve_eq_qp(h, g, a, b);
  CHECK((a * z - b).norm() <= 1e-9);
  // Stationarity: H z + g lies in the row space of A.
  const Vector grad = h * z + g;
  const Vector lambda = a.transpose().colPivHouseholderQr().solve(-grad);
  CHECK((grad + a.transpose() * lambda).norm() <= 1e-9);

  EqQpFactor factor(h, a);
  CHECK((factor.solve(g, b) - z).norm() <= 1e-9);

  Matrix dup(2, 2);
  dup << 1, 1, 1, 1;
  try {
    solve_eq_qp(Matrix::Identity(2, 2), Vector::Zero(2), dup, Vector::Ones(2));
    FAIL("expected a singular KKT error");
  } catch (const SingularKktError& e) {
    CHECK(e.constraint_rank == 1);
    CHECK(e.constraints == 2);
    CHECK(e.kkt_rank < e.kkt_size);
  }
  CHECK_THROWS_AS(solve_eq_qp(Matrix::Zero(2, 2), Vector::Ones(2), Matrix(0, 2), Vector(0)), SingularKktError);
}

TEST_CASE("polytope QP with active bound") {
  // min (1+u)^2 + u^2 s.t. u >= 0
  Polytope poly;
  poly.g = Matrix::Constant(1, 1, -1.0);
  poly.h = Vector::Zero(1);
  const Vector z = solve_qp(Matrix::Constant(1, 1, 4.0), Vector::Constant(1, 2.0), poly);
  CHECK(std::abs(z(0)) <= 1e-8);
}

TEST_CASE("unconstrained polytope reduces to the equality solver") {
  std::mt19937_64 rng(4);
  const Matrix l = random_matrix(rng, 4, 4);
  const Matrix h = l * l.transpose() + Matrix::Identity(4, 4);
  const Vector g = random_matrix(rng, 4, 1);
  Polytope poly = Polytope::unconstrained(4);
  CHECK((solve_qp(h, g, poly) - solve_eq_qp(h, g, Matrix(0, 4), Vector(0))).norm() <= 1e-12);
}

TEST_CASE("polytope QP agrees with vertex enumeration on small boxes") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix l = random_matrix(rng, 2, 2);
    const Matrix h = l * l.transpose() + 0.1 * Matrix::Identity(2, 2);
    const Vector g = 3.0 * random_matrix(rng, 2, 1);
    Polytope box;
    box.g.resize(4, 2);
    box.g << 1, 0, -1, 0, 0, 1, 0, -1;
    box.h = Vector::Ones(4);
    const Vector z = solve_qp(h, g, box);
    CHECK((box.g * z - box.h).maxCoeff() <= 1e-8);
    // Brute-force oracle over a fine grid refined near the optimum.
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 400; ++i) {
      for (int j = 0; j <= 400; ++j) {
        const Vector c = (Vector(2) << -1.0 + i / 200.0, -1.0 + j / 200.0).finished();
        best = std::min(best, objective(h, g, c));
      }
    }
    CHECK(objective(h, g, z) <= best + 1e-9);
  }
}

TEST_CASE("polytope QP with equalities satisfies KKT") {
  std::mt19937_64 rng(23);
  const Matrix l = random_matrix(rng, 5, 5);
  const Matrix h = l * l.transpose();
  const Vector g = random_matrix(rng, 5, 1);
  Polytope poly;
  poly.g.resize(10, 5);
  poly.g << Matrix::Identity(5, 5), -Matrix::Identity(5, 5);
  poly.h = Vector::Constant(10, 0.3);
  poly.a_eq = Matrix::Ones(1, 5);
  poly.b_eq = Vector::Constant(1, 0.5);
  QpSolver solver(h, poly.g, poly.a_eq);
  const QpResult res = solver.solve(g, poly.h, poly.b_eq);
  CHECK(res.primal_residual <= 1e-8);
  CHECK(res.dual_residual <= 1e-8);
  CHECK(std::abs(res.z.sum() - 0.5) <= 1e-8);
  CHECK(res.y_ineq.minCoeff() >= -1e-8);
  // Complementary slackness.
  const Vector slack = poly.h - poly.g * res.z;
  CHECK(std::abs(slack.dot(res.y_ineq)) <= 1e-7);

  // Warm-started resolve with a perturbed linear term agrees with a cold solve.
  const Vector g2 = g + 0.01 * Vector::Ones(5);
  const QpResult warm = solver.solve(g2, poly.h, poly.b_eq);
  const Vector cold = solve_qp(h, g2, poly);
  CHECK((warm.z - cold).norm() <= 1e-7);
}

TEST_CASE("deterministic results") {
  std::mt19937_64 rng(31);
  const Matrix l = random_matrix(rng, 4, 4);
  const Matrix h = l * l.transpose();
  const Vector g = random_matrix(rng, 4, 1);
  Polytope poly;
  poly.g = random_matrix(rng, 6, 4);
  poly.h = Vector::Ones(6);
  const Vector a = solve_qp(h, g, poly);
  const Vector b = solve_qp(h, g, poly);
  CHECK(a == b);
}

TEST_CASE("infeasible polytope and iteration limit errors") {
  Polytope poly;
  poly.g.resize(2, 1);
  poly.g << 1, -1;
  poly.h = Vector::Constant(2, -1.0);  // u <= -1 and u >= 1
  CHECK_THROWS_AS(solve_qp(Matrix::Identity(1, 1), Vector::Zero(1), poly), InfeasibleError);

  QpSettings tight;
  tight.max_iter = 3;
  tight.polish = false;
  Polytope box;
  box.g = Matrix::Identity(2, 2);
  box.h = Vector::Constant(2, -0.3);
  Matrix h(2, 2);
  h << 1, 0.99, 0.99, 1;
  try {
    solve_qp(h, Vector::Ones(2), box, tight);
    FAIL("expected iteration limit");
  } catch (const IterationLimitError& e) {
    CHECK(e.primal_residual >= 0.0);
  }
}

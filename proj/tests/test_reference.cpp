#include <doctest.h>

#include <sstream>

#include "dlmpc/reference.hpp"
#include "test_support.hpp"

using namespace dlmpc;
using dlmpc::testing::scalar_model;
using dlmpc::testing::separable_problem;
using dlmpc::testing::uniform_state;

namespace {

MpcProblem scalar_problem() {
  MpcProblem mp(scalar_model(1.0, 1.0), 1);
  const HorizonSpec& h = mp.horizon();
  mp.add_cost({0, {h.x_row(1, 0)}, Matrix::Identity(1, 1), Vector()});
  mp.add_cost({0, {h.u_row(0, 0)}, Matrix::Identity(1, 1), Vector()});
  mp.set_stage_cost({Matrix::Identity(1, 1), Matrix::Identity(1, 1)});
  return mp;
}

}  // namespace

TEST_CASE("oracle on the scalar instance") {
  const Vector x0 = Vector::Constant(1, 1.0);
  {
    const auto sol = solve_centralized(scalar_problem(), x0);
    CHECK(sol.trajectory.u(0, 0) == doctest::Approx(-0.5));
    CHECK(sol.objective == doctest::Approx(0.5));
    CHECK(sol.residual <= 1e-8);
  }
  {
    MpcProblem mp = scalar_problem();
    mp.add_constraint({0, {mp.horizon().u_row(0, 0)}, Vector::Constant(1, -1.0), 0.0, false});
    const auto sol = solve_centralized(mp, x0, QpSettings{1.0, 1e-6, 200000, 1e-10});
    CHECK(std::abs(sol.trajectory.u(0, 0)) < 1e-8);
    CHECK(sol.objective == doctest::Approx(1.0));
  }
  {
    MpcProblem mp = scalar_problem();
    mp.set_terminal_constraint(true);
    const auto sol = solve_centralized(mp, x0);
    CHECK(sol.trajectory.u(0, 0) == doctest::Approx(-1.0));
    CHECK(std::abs(sol.trajectory.x(0, 1)) < 1e-12);
  }
  CHECK_THROWS_AS(solve_centralized(scalar_problem(), Vector::Zero(2)), std::invalid_argument);
}

TEST_CASE("controller names round trip") {
  for (Controller c : {Controller::algorithm1, Controller::algorithm2, Controller::centralized}) {
    CHECK(parse_controller(controller_name(c)) == c);
  }
  CHECK_THROWS_AS(parse_controller("pid"), std::invalid_argument);
}

TEST_CASE("receding horizon bookkeeping") {
  const SystemModel plant = scalar_model(1.0, 1.0);
  const ProblemSchedule schedule = [](int) { return scalar_problem(); };
  RecedingOptions opts;
  opts.controller = Controller::centralized;
  const Vector x0 = Vector::Constant(1, 1.0);

  const RunRecord empty = receding_horizon(schedule, plant, x0, 0, opts);
  CHECK(empty.steps() == 0);
  CHECK(empty.x.cols() == 1);
  CHECK(empty.cost == 0.0);

  const RunRecord rec = receding_horizon(schedule, plant, x0, 3, opts);
  REQUIRE(rec.steps() == 3);
  CHECK(rec.complete);
  // u = -x/2 each step, so x halves.
  CHECK(rec.x(0, 3) == doctest::Approx(0.125));
  const double expected = 1.0 + 0.25 + 0.25 + 0.0625 + 0.0625 + 0.015625 + 0.015625;
  CHECK(rec.cost == doctest::Approx(expected));
  CHECK(closed_loop_cost(rec, {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}) == doctest::Approx(expected));

  opts.disturbance = {Vector::Constant(1, 0.1)};
  CHECK_THROWS_AS(receding_horizon(schedule, plant, x0, 3, opts), std::invalid_argument);
  opts.disturbance = {Vector::Constant(1, 0.1), Vector::Zero(1), Vector::Zero(1)};
  const RunRecord dist = receding_horizon(schedule, plant, x0, 3, opts);
  CHECK(dist.x(0, 1) == doctest::Approx(0.6));
}

TEST_CASE("distributed closed loop tracks the oracle") {
  const SystemModel plant = build_benchmark_chain(5);
  const MpcProblem mp = separable_problem(plant, 5);
  const ProblemSchedule schedule = [&](int) { return mp; };
  const Vector x0 = uniform_state(10, 2020);

  RecedingOptions dist;
  dist.controller = Controller::algorithm1;
  dist.engine.admm.eps_p = 1e-6;
  dist.engine.admm.eps_d = 1e-6;
  dist.track_achievability = true;
  RecedingOptions central;
  central.controller = Controller::centralized;

  const RunRecord a = receding_horizon(schedule, plant, x0, 10, dist);
  const RunRecord b = receding_horizon(schedule, plant, x0, 10, central);
  REQUIRE(a.complete);
  REQUIRE(b.complete);
  CHECK((a.x - b.x).lpNorm<Eigen::Infinity>() <= 1e-3 * b.x.lpNorm<Eigen::Infinity>());
  CHECK(a.audit.passed);
  for (const auto& st : a.stats) {
    CHECK(st.achievability <= 1e-9);
    CHECK(st.iterations > 0);
  }
}

TEST_CASE("a failing step truncates the record") {
  const SystemModel plant = build_benchmark_chain(4);
  const MpcProblem mp = separable_problem(plant, 4);
  RecedingOptions opts;
  opts.controller = Controller::algorithm1;
  opts.engine.admm.max_iter = 2;
  const RunRecord rec = receding_horizon([&](int) { return mp; }, plant, uniform_state(8, 1), 5, opts);
  CHECK_FALSE(rec.complete);
  CHECK(rec.steps() == 0);
  CHECK(rec.failure.find("step 0") != std::string::npos);
}

TEST_CASE("CSV writers") {
  const SystemModel plant = scalar_model(1.0, 1.0);
  RecedingOptions opts;
  opts.controller = Controller::centralized;
  const RunRecord rec = receding_horizon([](int) { return scalar_problem(); }, plant, Vector::Constant(1, 1.0), 2, opts);
  std::ostringstream traj;
  write_trajectory_csv(traj, rec, plant.partition());
  CHECK(traj.str().rfind("t,subsystem,signal,index,value\n", 0) == 0);
  CHECK(traj.str().find("0,0,u,0,-0.5") != std::string::npos);
  std::ostringstream stats;
  write_stats_csv(stats, rec);
  CHECK(stats.str().rfind("t,solver,iters,max_agent_ms,total_msgs\n", 0) == 0);
  const std::string text = stats.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

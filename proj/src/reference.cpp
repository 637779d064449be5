#include "dlmpc/reference.hpp"

#include <chrono>
#include <memory>
#include <ostream>

namespace dlmpc {

CentralizedSolution solve_centralized(const MpcProblem& problem, const Vector& x0, const QpSettings& settings) {
  const HorizonSpec& h = problem.horizon();
  const SystemModel& model = problem.model();
  const int n = h.n();
  const int p = h.p();
  const int T = h.steps();
  const Eigen::Index dim = h.rows();
  if (x0.size() != n) throw std::invalid_argument("solve_centralized: initial state has wrong size");

  Matrix hess = Matrix::Zero(dim, dim);
  Vector grad = Vector::Zero(dim);
  for (const auto& term : problem.costs()) {
    for (std::size_t a = 0; a < term.indices.size(); ++a) {
      grad(term.indices[a]) += term.linear(static_cast<Eigen::Index>(a));
      for (std::size_t b = 0; b < term.indices.size(); ++b) {
        hess(term.indices[a], term.indices[b]) += 2.0 * term.weight(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
    }
  }

  const auto constraints = problem.constraints();
  Eigen::Index n_eq = static_cast<Eigen::Index>(n) * (T + 1);
  Eigen::Index n_ineq = 0;
  for (const auto& c : constraints) (c.equality ? n_eq : n_ineq) += 1;
  Polytope poly;
  poly.a_eq = Matrix::Zero(n_eq, dim);
  poly.b_eq = Vector::Zero(n_eq);
  poly.g = Matrix::Zero(n_ineq, dim);
  poly.h = Vector::Zero(n_ineq);
  // x_0 = x0, x_{t+1} - A x_t - B u_t = 0.
  const Matrix a = model.dense_a();
  const Matrix b = model.dense_b();
  poly.a_eq.block(0, h.x_row(0, 0), n, n).setIdentity();
  poly.b_eq.head(n) = x0;
  for (int t = 0; t < T; ++t) {
    const Eigen::Index row = static_cast<Eigen::Index>(n) * (t + 1);
    poly.a_eq.block(row, h.x_row(t + 1, 0), n, n).setIdentity();
    poly.a_eq.block(row, h.x_row(t, 0), n, n) = -a;
    poly.a_eq.block(row, h.u_row(t, 0), n, p) = -b;
  }
  Eigen::Index eq = static_cast<Eigen::Index>(n) * (T + 1);
  Eigen::Index in = 0;
  for (const auto& c : constraints) {
    Matrix& m = c.equality ? poly.a_eq : poly.g;
    Vector& rhs = c.equality ? poly.b_eq : poly.h;
    const Eigen::Index row = c.equality ? eq++ : in++;
    for (std::size_t k = 0; k < c.indices.size(); ++k) m(row, c.indices[k]) += c.coeffs(static_cast<Eigen::Index>(k));
    rhs(row) = c.bound;
  }

  CentralizedSolution out;
  if (n_ineq == 0) {
    out.stacked = solve_eq_qp(hess, grad, poly.a_eq, poly.b_eq);
  } else {
    QpSolver solver(hess, poly.g, poly.a_eq, settings);
    const QpResult res = solver.solve(grad, poly.h, poly.b_eq);
    out.stacked = res.z;
    out.iterations = res.iterations;
  }
  out.trajectory.x.resize(n, T + 1);
  out.trajectory.u.resize(p, T);
  for (int t = 0; t <= T; ++t) out.trajectory.x.col(t) = out.stacked.segment(h.x_row(t, 0), n);
  for (int t = 0; t < T; ++t) out.trajectory.u.col(t) = out.stacked.segment(h.u_row(t, 0), p);
  out.objective = problem.objective(out.stacked);
  out.residual = std::max((poly.a_eq * out.stacked - poly.b_eq).cwiseAbs().maxCoeff(), problem.max_violation(out.stacked));
  return out;
}

const char* controller_name(Controller controller) {
  switch (controller) {
    case Controller::algorithm1:
      return "algorithm1";
    case Controller::algorithm2:
      return "algorithm2";
    case Controller::centralized:
      return "centralized";
  }
  return "unknown";
}

Controller parse_controller(const std::string& name) {
  if (name == "algorithm1") return Controller::algorithm1;
  if (name == "algorithm2") return Controller::algorithm2;
  if (name == "centralized") return Controller::centralized;
  throw std::invalid_argument("unknown controller: " + name);
}

namespace {

double wall_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

RunRecord receding_horizon(const ProblemSchedule& schedule, const SystemModel& plant, const Vector& x0, int steps,
                           const RecedingOptions& options) {
  if (steps < 0) throw std::invalid_argument("receding_horizon: negative step count");
  const int n = plant.partition().n();
  const int p = plant.partition().p();
  if (x0.size() != n) throw std::invalid_argument("receding_horizon: initial state has wrong size");
  if (!options.disturbance.empty() && static_cast<int>(options.disturbance.size()) < steps) {
    throw std::invalid_argument("receding_horizon: disturbance sequence too short");
  }
  RunRecord rec;
  rec.controller = options.controller;
  rec.x = Matrix::Zero(n, steps + 1);
  rec.u = Matrix::Zero(p, steps);
  rec.x.col(0) = x0;

  SequentialScheduler sequential;
  Scheduler& scheduler = options.scheduler ? *options.scheduler : sequential;
  std::unique_ptr<DistributedMpc> engine;
  Achievability ach;
  double worst_ach = 0.0;
  const Matrix a = plant.dense_a();
  const Matrix b = plant.dense_b();

  int done = 0;
  StageCost stage;
  for (int t = 0; t < steps; ++t) {
    const Vector xt = rec.x.col(t);
    StepStats st;
    st.t = t;
    try {
      const MpcProblem mp = schedule(t);
      if (t == 0) stage = mp.stage_cost();
      const int T = mp.steps();
      Trajectory plan;
      if (options.controller == Controller::centralized) {
        const auto start = std::chrono::steady_clock::now();
        const CentralizedSolution sol = solve_centralized(mp, xt, options.oracle);
        st.max_agent_ms = wall_ms(start);
        st.iteration_ms = st.max_agent_ms;
        st.iterations = sol.iterations;
        plan = sol.trajectory;
        st.terminal_norm_psi = plan.x.col(T).norm();
      } else {
        if (!engine) {
          EngineOptions eo = options.engine;
          eo.algorithm = options.controller == Controller::algorithm1 ? Algorithm::decoupled : Algorithm::coupled;
          engine = std::make_unique<DistributedMpc>(mp, eo, scheduler);
          if (options.track_achievability) {
            ach = assemble_achievability(mp.model(), mp.horizon());
            engine->set_iteration_hook([&](int, const DistributedMpc& e) {
              worst_ach = std::max(worst_ach, achievability_residual(ach, e.assemble_psi().phi));
            });
          }
        } else {
          engine->set_problem(mp);
        }
        worst_ach = 0.0;
        const StepResult res = engine->solve(xt);
        plan = res.predicted;
        st.iterations = res.report.iterations;
        st.inner_iterations = res.report.inner_iterations;
        st.setup_ms = res.report.setup_ms;
        st.iteration_ms = res.report.iteration_ms;
        st.max_agent_ms = res.report.setup_ms + res.report.iteration_ms;
        st.per_iteration_ms = res.report.per_iteration_ms;
        st.messages = res.report.messages;
        st.bytes = res.report.bytes;
        st.achievability = worst_ach;
        st.terminal_norm_psi = reconstruct_trajectory(engine->assemble_psi(), xt).x.col(T).norm();
      }
      st.terminal_norm = plan.x.col(T).norm();
      st.objective = mp.objective(mp.stack(plan));
      rec.u.col(t) = plan.u.col(0);
      if (options.keep_predictions) rec.predictions.push_back(plan);
    } catch (const std::exception& e) {
      rec.complete = false;
      rec.failure = "step " + std::to_string(t) + ": " + e.what();
      break;
    }
    Vector next = a * xt + b * rec.u.col(t);
    if (!options.disturbance.empty()) next += options.disturbance[t];
    rec.x.col(t + 1) = next;
    rec.stats.push_back(std::move(st));
    done = t + 1;
  }
  if (done < steps) {
    rec.x.conservativeResize(Eigen::NoChange, done + 1);
    rec.u.conservativeResize(Eigen::NoChange, done);
  }
  if (engine) {
    rec.audit = audit(engine->access_log(), engine->graph(), engine->options().radius);
    rec.admm_stats = engine->admm_stats();
    rec.consensus_stats = engine->consensus_stats();
    rec.message_log = engine->bus().round_log();
    rec.counts = engine->subproblem_counts();
  }
  if (stage.state_weight.size() > 0) rec.cost = closed_loop_cost(rec, stage);
  return rec;
}

double closed_loop_cost(const RunRecord& record, const StageCost& cost) {
  const Eigen::Index steps = record.u.cols();
  if (steps == 0 && record.x.cols() == 0) return 0.0;
  if (cost.state_weight.rows() != record.x.rows() || cost.input_weight.rows() != record.u.rows()) {
    throw std::invalid_argument("closed_loop_cost: weights do not match the record");
  }
  double total = 0.0;
  for (Eigen::Index t = 0; t < steps; ++t) {
    total += record.x.col(t).dot(cost.state_weight * record.x.col(t));
    total += record.u.col(t).dot(cost.input_weight * record.u.col(t));
  }
  const Vector last = record.x.col(steps);
  return total + last.dot(cost.state_weight * last);
}

void write_trajectory_csv(std::ostream& out, const RunRecord& record, const SubsystemPartition& partition) {
  out << "t,subsystem,signal,index,value\n";
  out.precision(17);
  for (Eigen::Index t = 0; t < record.x.cols(); ++t) {
    for (int i = 0; i < partition.count(); ++i) {
      for (int k = 0; k < partition.state_dim(i); ++k) {
        out << t << ',' << i << ",x," << k << ',' << record.x(partition.state_offset(i) + k, t) << '\n';
      }
      if (t >= record.u.cols()) continue;
      for (int k = 0; k < partition.input_dim(i); ++k) {
        out << t << ',' << i << ",u," << k << ',' << record.u(partition.input_offset(i) + k, t) << '\n';
      }
    }
  }
}

void write_stats_csv(std::ostream& out, const RunRecord& record) {
  out << "t,solver,iters,max_agent_ms,total_msgs\n";
  for (const auto& st : record.stats) {
    out << st.t << ',' << controller_name(record.controller) << ',' << st.iterations << ',' << st.max_agent_ms << ','
        << st.messages << '\n';
  }
}

void write_admm_stats_csv(std::ostream& out, const std::vector<AdmmStatRow>& rows) {
  out << "iter,subsystem,primal_residual,dual_residual\n";
  out.precision(10);
  for (const auto& r : rows) out << r.iter << ',' << r.subsystem << ',' << r.primal_residual << ',' << r.dual_residual << '\n';
}

void write_consensus_stats_csv(std::ostream& out, const std::vector<ConsensusStatRow>& rows) {
  out << "outer_iter,inner_iter,subsystem,consensus_residual\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.outer_iter << ',' << r.inner_iter << ',' << r.subsystem << ',' << r.consensus_residual << '\n';
  }
}

void write_message_csv(std::ostream& out, const std::vector<MessageLogRow>& rows) {
  out << "agent,round,msgs_sent,bytes_sent,model_blocks_read\n";
  for (const auto& r : rows) {
    out << r.agent << ',' << r.round << ',' << r.messages << ',' << r.bytes << ',' << r.model_blocks << '\n';
  }
}

}  // namespace dlmpc

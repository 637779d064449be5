#include "dlmpc/admm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <sstream>

namespace dlmpc {

void validate(const AdmmParams& params) {
  if (!(params.rho > 0.0) || !(params.eps_p > 0.0) || !(params.eps_d > 0.0) || params.max_iter <= 0 ||
      params.adapt_every < 0 || !(params.adapt_ratio > 1.0) || !(params.adapt_factor > 1.0)) {
    throw std::invalid_argument("ADMM parameters must be positive");
  }
}

Vector row_update(RowSubproblem& sub, const Vector& psi_row, const Vector& lambda_row) {
  if (psi_row.size() != lambda_row.size()) throw std::invalid_argument("row_update: slice size mismatch");
  const Vector none = Vector::Zero(static_cast<Eigen::Index>(sub.footprint_size()));
  return sub.solve(psi_row - lambda_row, none, none).phi;
}

Matrix column_update(const ColumnProjector& proj, const Matrix& phi_col, const Matrix& lambda_col) {
  if (phi_col.rows() != lambda_col.rows() || phi_col.cols() != lambda_col.cols()) {
    throw std::invalid_argument("column_update: slice size mismatch");
  }
  return project_affine(proj, phi_col + lambda_col);
}

Matrix dual_update(const Matrix& phi, const Matrix& psi, const Matrix& lambda) {
  if (phi.rows() != psi.rows() || phi.cols() != psi.cols() || lambda.rows() != psi.rows() ||
      lambda.cols() != psi.cols()) {
    throw std::invalid_argument("dual_update: shape mismatch");
  }
  return lambda + phi - psi;
}

bool converged(const Matrix& phi, const Matrix& psi_new, const Matrix& psi_old, const AdmmParams& params) {
  return (phi - psi_new).norm() <= params.eps_p && (psi_new - psi_old).norm() <= params.eps_d;
}

const char* algorithm_name(Algorithm algorithm) {
  return algorithm == Algorithm::decoupled ? "algorithm1" : "algorithm2";
}

namespace {

int index_in(const std::vector<int>& sorted, int value) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), value);
  if (it == sorted.end() || *it != value) return -1;
  return static_cast<int>(it - sorted.begin());
}

int subsystem_of_state(const SubsystemPartition& part, int k) { return part.state_owner(k); }

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

/// CPU time of the calling thread. Agents share cores in simulation, so time
/// spent descheduled is not charged to the agent that happened to be running.
double thread_cpu_ms() {
#if defined(CLOCK_THREAD_CPUTIME_ID)
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) * 1e3 + static_cast<double>(ts.tv_nsec) * 1e-6;
#else
  return std::chrono::duration<double, std::milli>(Clock::now().time_since_epoch()).count();
#endif
}

}  // namespace

ColumnProjector build_column_projector(const ModelView& view, const InterconnectionGraph& graph,
                                       const HorizonSpec& horizon, const std::vector<int>& col_rows,
                                       const std::vector<int>& cols) {
  const SubsystemPartition& part = view.partition();
  const int T = horizon.steps();
  // Achievability equations are indexed like the state rows of Phi.
  std::vector<int> equations;
  auto touch_successors = [&](int t_next, int from, bool through_input) {
    for (int to : graph.successors(from)) {
      if (through_input ? !graph.b_support(to, from) : !graph.a_support(to, from)) continue;
      for (int k = 0; k < part.state_dim(to); ++k) equations.push_back(horizon.x_row(t_next, part.state_offset(to) + k));
    }
  };
  for (int r : col_rows) {
    const auto info = horizon.row_info(r);
    if (info.kind == HorizonSpec::Kind::state) {
      equations.push_back(r);
      if (info.time < T) touch_successors(info.time + 1, info.owner, false);
    } else {
      touch_successors(info.time + 1, info.owner, true);
    }
  }
  std::sort(equations.begin(), equations.end());
  equations.erase(std::unique(equations.begin(), equations.end()), equations.end());

  Matrix z = Matrix::Zero(static_cast<Eigen::Index>(equations.size()), static_cast<Eigen::Index>(col_rows.size()));
  for (std::size_t c = 0; c < col_rows.size(); ++c) {
    const int r = col_rows[c];
    const auto info = horizon.row_info(r);
    const auto col = static_cast<Eigen::Index>(c);
    if (info.kind == HorizonSpec::Kind::state) {
      z(index_in(equations, r), col) += 1.0;
      if (info.time == T) continue;
      const int local = info.component - part.state_offset(info.owner);
      for (int to : graph.successors(info.owner)) {
        if (!graph.a_support(to, info.owner)) continue;
        const Matrix& block = view.a_block(to, info.owner);
        for (int k = 0; k < part.state_dim(to); ++k) {
          const int eq = index_in(equations, horizon.x_row(info.time + 1, part.state_offset(to) + k));
          z(eq, col) -= block(k, local);
        }
      }
    } else {
      const int local = info.component - part.input_offset(info.owner);
      for (int to : graph.successors(info.owner)) {
        if (!graph.b_support(to, info.owner)) continue;
        const Matrix& block = view.b_block(to, info.owner);
        for (int k = 0; k < part.state_dim(to); ++k) {
          const int eq = index_in(equations, horizon.x_row(info.time + 1, part.state_offset(to) + k));
          z(eq, col) -= block(k, local);
        }
      }
    }
  }
  Matrix rhs = Matrix::Zero(z.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const int eq = index_in(equations, horizon.x_row(0, cols[c]));
    if (eq >= 0) rhs(eq, static_cast<Eigen::Index>(c)) = 1.0;
  }
  return ColumnProjector(std::move(z), std::move(rhs));
}

namespace {

/// Outgoing block shapes for one peer, filled with fresh values every round.
struct SendPlan {
  std::vector<Block> blocks;
  std::vector<std::vector<Eigen::Index>> positions;
};

/// Phi entries of the row slice that fall in [col_begin, col_end), grouped by
/// rows sharing the same column set. Values are left empty; `positions` holds,
/// per block and in row-major order, the offsets of the entries in the slice.
SendPlan plan_row_blocks(const SliceLayout& layout, int col_begin, int col_end) {
  SendPlan plan;
  for (std::size_t k = 0; k < layout.rows.size(); ++k) {
    const auto& cols = layout.cols[k];
    std::vector<int> picked;
    std::vector<Eigen::Index> pos;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (cols[c] >= col_begin && cols[c] < col_end) {
        picked.push_back(cols[c]);
        pos.push_back(layout.offsets[k] + static_cast<Eigen::Index>(c));
      }
    }
    if (picked.empty()) continue;
    if (plan.blocks.empty() || plan.blocks.back().cols != picked) {
      plan.blocks.push_back(Block{{}, picked, Matrix()});
      plan.positions.emplace_back();
    }
    plan.blocks.back().rows.push_back(layout.rows[k]);
    plan.positions.back().insert(plan.positions.back().end(), pos.begin(), pos.end());
  }
  return plan;
}

std::vector<Block> fill_blocks(const SendPlan& plan, const Vector& values) {
  std::vector<Block> blocks = plan.blocks;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto rows = static_cast<Eigen::Index>(blocks[b].rows.size());
    const auto cols = static_cast<Eigen::Index>(blocks[b].cols.size());
    blocks[b].values.resize(rows, cols);
    const auto& pos = plan.positions[b];
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) blocks[b].values(r, c) = values(pos[static_cast<std::size_t>(r * cols + c)]);
    }
  }
  return blocks;
}

}  // namespace

struct DistributedMpc::Agent {
  int id = 0;
  // Static layout.
  SliceLayout rows;
  std::vector<int> row_support;
  std::vector<int> col_rows;
  std::vector<int> cols;
  std::vector<int> row_peers;  // owners of columns touching our rows
  std::vector<int> col_peers;  // owners of rows touching our columns
  std::vector<std::vector<int>> psi_rows_for_peer;  // per col peer: local indices into col_rows
  std::vector<SendPlan> phi_plans;                  // per row peer
  ColumnProjector projector;
  RowProblemSpec spec;
  std::vector<int> foreign_owner;
  std::vector<int> copy_targets;                     // owners of foreign rows
  std::vector<std::vector<int>> copy_rows_for_target;  // foreign positions per target
  std::vector<std::vector<int>> own_holders;         // other holders of each own row
  std::vector<int> z_receivers;
  std::vector<std::vector<int>> z_rows_for_receiver;   // own row positions per receiver

  // Per-step data.
  Vector state_support;
  std::vector<Vector> x0_slices;
  std::unique_ptr<RowSubproblem> sub;

  // Iterates.
  Vector phi, psi, psi_prev, lambda;
  Matrix col_phi, col_psi, col_lambda;
  Vector fp_x, fp_z, fp_z_prev, fp_y;
  double primal = 0.0;
  double dual = 0.0;
  double consensus_residual = 0.0;
  double z_change = 0.0;
  bool done = false;
  bool inner_done = false;

  std::vector<Message> outbox;
  std::vector<Message> inbox;
  Block self_psi;  // projected rows of our own columns that we also own
};

DistributedMpc::~DistributedMpc() = default;

DistributedMpc::DistributedMpc(const MpcProblem& problem, EngineOptions options, Scheduler& scheduler)
    : problem_(problem), options_(std::move(options)), scheduler_(&scheduler) {
  validate(options_.admm);
  if (options_.algorithm == Algorithm::coupled) validate(options_.consensus);
  if (options_.radius < 0) throw std::invalid_argument("DistributedMpc: radius must be nonnegative");
  if (options_.algorithm == Algorithm::decoupled && problem_.coupled()) {
    throw std::invalid_argument("DistributedMpc: coupled costs or constraints need the consensus algorithm");
  }
  const SystemModel& model = problem_.model();
  graph_ = build_interconnection_graph(model);
  mask_ = build_locality_mask(graph_, options_.radius, problem_.horizon());
  parts_ = build_partitions(mask_, model.partition());
  const int count = model.subsystems();
  log_ = AccessLog(count);
  bus_ = MessageBus(build_channels(graph_, options_.radius), &log_, options_.keep_round_log);
  phase_ms_.assign(static_cast<std::size_t>(count), 0.0);
  agents_.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    agents_[i] = std::make_unique<Agent>();
    agents_[i]->id = i;
  }
  scheduler_->run(count, [this](int i) { setup_agent(i); });

  for (int i = 0; i < count; ++i) build_row_spec(i);
  register_holders();
}

void DistributedMpc::register_holders() {
  // Every copy of a row is announced to the row's owner once, before the
  // first solve with a given problem.
  const int count = static_cast<int>(agents_.size());
  const HorizonSpec& h = problem_.horizon();
  std::vector<std::vector<std::vector<int>>> holders(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) holders[i].resize(agents_[i]->rows.rows.size());
  for (int j = 0; j < count; ++j) {
    for (int r : agents_[j]->spec.foreign_rows) {
      const int owner = trajectory_owner(h, r);
      const int pos = index_in(agents_[owner]->rows.rows, r);
      holders[owner][pos].push_back(j);
    }
  }
  for (int i = 0; i < count; ++i) {
    Agent& a = *agents_[i];
    a.own_holders = holders[i];
    a.z_receivers.clear();
    a.z_rows_for_receiver.clear();
    const std::size_t n_own = a.rows.rows.size();
    a.spec.shared.assign(a.spec.footprint_size(), true);
    std::map<int, std::vector<int>> per_receiver;
    for (std::size_t k = 0; k < n_own; ++k) {
      a.spec.shared[k] = !a.own_holders[k].empty();
      for (int j : a.own_holders[k]) per_receiver[j].push_back(static_cast<int>(k));
    }
    for (auto& [j, list] : per_receiver) {
      a.z_receivers.push_back(j);
      a.z_rows_for_receiver.push_back(list);
    }
  }
}

void DistributedMpc::set_problem(const MpcProblem& problem) {
  if (problem.steps() != problem_.steps() || !(problem.model().partition() == problem_.model().partition()) ||
      problem.model().dense_a() != problem_.model().dense_a() ||
      problem.model().dense_b() != problem_.model().dense_b()) {
    throw std::invalid_argument("set_problem: plant, partition and horizon must stay the same");
  }
  if (options_.algorithm == Algorithm::decoupled && problem.coupled()) {
    throw std::invalid_argument("set_problem: coupled costs or constraints need the consensus algorithm");
  }
  std::vector<std::vector<int>> before;
  for (const auto& a : agents_) before.push_back(a->spec.foreign_rows);
  problem_ = problem;
  for (int i = 0; i < static_cast<int>(agents_.size()); ++i) build_row_spec(i);
  register_holders();
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    if (agents_[i]->spec.foreign_rows != before[i]) footprints_changed_ = true;
  }
}

void DistributedMpc::setup_agent(int i) {
  Agent& a = *agents_[i];
  const SubsystemSets& sets = parts_[i];
  const HorizonSpec& h = problem_.horizon();
  std::vector<std::vector<int>> row_cols;
  for (int r : sets.rows) {
    row_cols.push_back(h.row_info(r).kind == HorizonSpec::Kind::state ? sets.x_row_cols : sets.u_row_cols);
  }
  a.rows = SliceLayout(sets.rows, row_cols);
  a.row_support = sets.row_support;
  a.col_rows = sets.col_support;
  a.cols = sets.cols;
  a.row_peers = sets.row_peers;
  a.col_peers = sets.col_peers;
  for (int peer : a.col_peers) {
    std::vector<int> local;
    for (std::size_t k = 0; k < a.col_rows.size(); ++k) {
      if (trajectory_owner(h, a.col_rows[k]) == peer) local.push_back(static_cast<int>(k));
    }
    a.psi_rows_for_peer.push_back(local);
  }
  const SubsystemPartition& part = problem_.model().partition();
  for (int peer : a.row_peers) {
    const int begin = part.state_offset(peer);
    a.phi_plans.push_back(plan_row_blocks(a.rows, begin, begin + part.state_dim(peer)));
  }

  AgentAccess& access = log_.at(i);
  ModelView view(problem_.model(), access);
  a.projector = build_column_projector(view, graph_, h, a.col_rows, a.cols);
  if (!a.projector.consistent()) {
    std::ostringstream msg;
    msg << "subsystem " << i << ": local achievability system is inconsistent (residual "
        << a.projector.consistency_residual() << "); the system is not localizable at d=" << options_.radius;
    throw SolverError(msg.str());
  }
  if (options_.fault.kind == FaultPlan::Kind::far_model_read && options_.fault.agent == i) {
    const int far = i == 0 ? problem_.model().subsystems() - 1 : 0;
    (void)view.a_block(far, far);
  }

}

void DistributedMpc::build_row_spec(int i) {
  // Own cost terms and constraints, plus any foreign rows they touch.
  Agent& a = *agents_[i];
  const HorizonSpec& h = problem_.horizon();
  a.spec = RowProblemSpec{};
  a.foreign_owner.clear();
  a.copy_targets.clear();
  a.copy_rows_for_target.clear();
  a.spec.own = a.rows;
  std::vector<int> foreign;
  auto collect = [&](const std::vector<int>& indices) {
    for (int r : indices) {
      if (trajectory_owner(h, r) != i) foreign.push_back(r);
    }
  };
  for (const auto& term : problem_.costs()) {
    if (term.owner != i) continue;
    a.spec.costs.push_back(term);
    collect(term.indices);
  }
  for (const auto& c : problem_.constraints()) {
    if (c.owner != i) continue;
    a.spec.constraints.push_back(c);
    collect(c.indices);
  }
  std::sort(foreign.begin(), foreign.end());
  foreign.erase(std::unique(foreign.begin(), foreign.end()), foreign.end());
  if (!foreign.empty() && options_.algorithm == Algorithm::decoupled) {
    throw std::invalid_argument("subsystem " + std::to_string(i) + ": cost or constraint couples subsystems");
  }
  const auto neighborhood = d_incoming(graph_, i, options_.radius);
  std::map<int, std::vector<int>> per_owner;
  for (std::size_t f = 0; f < foreign.size(); ++f) {
    const int owner = trajectory_owner(h, foreign[f]);
    if (!std::binary_search(neighborhood.begin(), neighborhood.end(), owner)) {
      throw std::invalid_argument("subsystem " + std::to_string(i) + ": coupling with subsystem " +
                                  std::to_string(owner) + " lies outside its d-hop incoming set");
    }
    a.foreign_owner.push_back(owner);
    per_owner[owner].push_back(static_cast<int>(f));
  }
  a.spec.foreign_rows = foreign;
  for (auto& [owner, list] : per_owner) {
    a.copy_targets.push_back(owner);
    a.copy_rows_for_target.push_back(list);
  }
}

const ColumnProjector& DistributedMpc::projector(int agent) const { return agents_.at(agent)->projector; }

std::vector<SubproblemCounts> DistributedMpc::subproblem_counts() const {
  std::vector<SubproblemCounts> out;
  for (const auto& a : agents_) {
    SubproblemCounts c;
    c.row_variables = static_cast<int>(a->rows.size());
    c.row_constraints = static_cast<int>(a->spec.constraints.size());
    c.column_variables = static_cast<int>(a->col_rows.size() * a->cols.size());
    c.column_constraints = static_cast<int>(a->projector.constraints() * static_cast<Eigen::Index>(a->cols.size()));
    out.push_back(c);
  }
  return out;
}

void DistributedMpc::run_phase(const std::function<void(int)>& work, std::vector<double>* sink) {
  const int count = static_cast<int>(agents_.size());
  scheduler_->run(count, [&](int i) {
    const double start = thread_cpu_ms();
    work(i);
    // Every delivered round is consumed by the phase that follows it.
    agents_[i]->inbox.clear();
    phase_ms_[i] = thread_cpu_ms() - start;
  });
  if (sink) sink->push_back(*std::max_element(phase_ms_.begin(), phase_ms_.end()));
}

void DistributedMpc::deliver(const RoundId& round) {
  std::vector<std::vector<Message>> outboxes(agents_.size());
  for (std::size_t i = 0; i < agents_.size(); ++i) outboxes[i] = std::move(agents_[i]->outbox);
  auto inboxes = bus_.exchange(round, std::move(outboxes));
  for (std::size_t i = 0; i < agents_.size(); ++i) agents_[i]->inbox.swap(inboxes[i]);
}

void DistributedMpc::measure(const Vector& measured_state) {
  const SubsystemPartition& part = problem_.model().partition();
  const int count = static_cast<int>(agents_.size());
  RoundId round{next_round(), step_, 0, 0, PayloadKind::state_measurement};
  scheduler_->run(count, [&](int i) {
    Agent& a = *agents_[i];
    a.outbox.clear();
    Block block;
    for (int k = 0; k < part.state_dim(i); ++k) block.rows.push_back(part.state_offset(i) + k);
    block.values = measured_state.segment(part.state_offset(i), part.state_dim(i));
    for (int j : a.col_peers) {
      if (j == i) continue;
      a.outbox.push_back(Message{round, i, j, PayloadKind::state_measurement, {block}});
    }
    if (options_.fault.kind == FaultPlan::Kind::far_message && options_.fault.agent == i) {
      const int far = i == 0 ? count - 1 : 0;
      a.outbox.push_back(Message{round, i, far, PayloadKind::state_measurement, {block}});
    }
  });
  deliver(round);

  scheduler_->run(count, [&](int i) {
    Agent& a = *agents_[i];
    AgentAccess& access = log_.at(i);
    a.state_support = Vector::Zero(static_cast<Eigen::Index>(a.row_support.size()));
    std::vector<int> owners;
    for (int c : a.row_support) owners.push_back(subsystem_of_state(part, c));
    owners.erase(std::unique(owners.begin(), owners.end()), owners.end());
    for (int j : owners) {
      const Block* block = nullptr;
      Block own;
      if (j == i) {
        for (int k = 0; k < part.state_dim(i); ++k) own.rows.push_back(part.state_offset(i) + k);
        own.values = measured_state.segment(part.state_offset(i), part.state_dim(i));
        block = &own;
      } else {
        block = &expect_message(a.inbox, j, PayloadKind::state_measurement).blocks.at(0);
      }
      access.state_reads.insert(j);
      for (std::size_t k = 0; k < block->rows.size(); ++k) {
        const int pos = index_in(a.row_support, block->rows[k]);
        if (pos >= 0) a.state_support(pos) = block->values(static_cast<Eigen::Index>(k), 0);
      }
    }
    a.x0_slices.assign(a.rows.rows.size(), Vector());
    for (std::size_t k = 0; k < a.rows.rows.size(); ++k) {
      Vector slice(static_cast<Eigen::Index>(a.rows.cols[k].size()));
      for (std::size_t c = 0; c < a.rows.cols[k].size(); ++c) {
        slice(static_cast<Eigen::Index>(c)) = a.state_support(index_in(a.row_support, a.rows.cols[k][c]));
      }
      a.x0_slices[k] = slice;
    }
  });
}

void DistributedMpc::decoupled_row_phase(int, double& elapsed) {
  std::vector<double> sink;
  run_phase([&](int i) {
    Agent& a = *agents_[i];
    a.phi = row_update(*a.sub, a.psi, a.lambda);
  }, &sink);
  elapsed += sink.back();
}

void DistributedMpc::coupled_row_phase(int outer, double& elapsed, int& inner_total) {
  const int count = static_cast<int>(agents_.size());
  const ConsensusParams& cp = options_.consensus;
  for (int inner = 1; inner <= cp.max_inner; ++inner) {
    ++inner_total;
    std::vector<double> sink;
    // Local minimization, then share copies with the owners.
    const RoundId x_round{next_round(), step_, outer, inner, PayloadKind::x_copy};
    run_phase([&](int i) {
      Agent& a = *agents_[i];
      a.fp_z_prev = a.fp_z;
      const RowSolution sol = consensus_x_update(*a.sub, a.psi, a.lambda, a.fp_z, a.fp_y);
      a.phi = sol.phi;
      a.fp_x = sol.footprint;
      a.outbox.clear();
      const std::size_t n_own = a.rows.rows.size();
      for (std::size_t t = 0; t < a.copy_targets.size(); ++t) {
        Block xs;
        Block ys;
        const auto& list = a.copy_rows_for_target[t];
        xs.values.resize(static_cast<Eigen::Index>(list.size()), 1);
        ys.values.resize(static_cast<Eigen::Index>(list.size()), 1);
        for (std::size_t k = 0; k < list.size(); ++k) {
          const auto fp = static_cast<Eigen::Index>(n_own) + list[k];
          xs.rows.push_back(a.spec.foreign_rows[list[k]]);
          xs.values(static_cast<Eigen::Index>(k), 0) = a.fp_x(fp);
          ys.values(static_cast<Eigen::Index>(k), 0) = a.fp_y(fp);
        }
        ys.rows = xs.rows;
        a.outbox.push_back(Message{x_round, i, a.copy_targets[t], PayloadKind::x_copy, {xs, ys}});
      }
    }, &sink);
    deliver(x_round);

    // Owners average the copies of their rows and return the result.
    const RoundId z_round{next_round(), step_, outer, inner, PayloadKind::z_value};
    run_phase([&](int i) {
      Agent& a = *agents_[i];
      const std::size_t n_own = a.rows.rows.size();
      // Running sum of copy + dual per owned row; the average matches consensus_z_update.
      Vector sum = a.fp_x.head(static_cast<Eigen::Index>(n_own)) + a.fp_y.head(static_cast<Eigen::Index>(n_own));
      std::vector<std::size_t> received(n_own, 1);
      for (int holder : a.z_receivers) {
        const Message& msg = expect_message(a.inbox, holder, PayloadKind::x_copy);
        const Block& xs = msg.blocks.at(0);
        const Block& ys = msg.blocks.at(1);
        if (ys.rows.size() != xs.rows.size()) throw ProtocolError("x_copy payload: missing dual for a copy");
        for (std::size_t k = 0; k < xs.rows.size(); ++k) {
          const int pos = index_in(a.rows.rows, xs.rows[k]);
          if (pos < 0) throw ProtocolError("x_copy payload names a row the receiver does not own");
          sum(pos) += xs.values(static_cast<Eigen::Index>(k), 0) + ys.values(static_cast<Eigen::Index>(k), 0);
          ++received[pos];
        }
      }
      for (std::size_t k = 0; k < n_own; ++k) {
        if (received[k] != a.own_holders[k].size() + 1) throw ProtocolError("missing copy of an owned row");
        const auto idx = static_cast<Eigen::Index>(k);
        a.fp_z(idx) = a.spec.shared[k] ? sum(idx) / static_cast<double>(received[k]) : a.fp_x(idx);
      }
      a.outbox.clear();
      for (std::size_t r = 0; r < a.z_receivers.size(); ++r) {
        Block zs;
        const auto& list = a.z_rows_for_receiver[r];
        zs.values.resize(static_cast<Eigen::Index>(list.size()), 1);
        for (std::size_t k = 0; k < list.size(); ++k) {
          zs.rows.push_back(a.rows.rows[list[k]]);
          zs.values(static_cast<Eigen::Index>(k), 0) = a.fp_z(list[k]);
        }
        a.outbox.push_back(Message{z_round, i, a.z_receivers[r], PayloadKind::z_value, {zs}});
      }
    }, &sink);
    deliver(z_round);

    // Dual ascent on the copies and local residuals.
    run_phase([&](int i) {
      Agent& a = *agents_[i];
      const std::size_t n_own = a.rows.rows.size();
      for (int owner : a.copy_targets) {
        const Block& zs = expect_message(a.inbox, owner, PayloadKind::z_value).blocks.at(0);
        for (std::size_t k = 0; k < zs.rows.size(); ++k) {
          const int pos = index_in(a.spec.foreign_rows, zs.rows[k]);
          if (pos < 0) throw ProtocolError("z_value payload names a row the receiver does not hold");
          a.fp_z(static_cast<Eigen::Index>(n_own) + pos) = zs.values(static_cast<Eigen::Index>(k), 0);
        }
      }
      a.fp_y = consensus_y_update(a.fp_x, a.fp_z, a.fp_y);
      double res = 0.0;
      double change = 0.0;
      for (std::size_t k = 0; k < a.spec.footprint_size(); ++k) {
        if (!a.spec.shared[k]) {
          a.fp_y(static_cast<Eigen::Index>(k)) = 0.0;
          continue;
        }
        const auto idx = static_cast<Eigen::Index>(k);
        res += (a.fp_x(idx) - a.fp_z(idx)) * (a.fp_x(idx) - a.fp_z(idx));
        change += (a.fp_z(idx) - a.fp_z_prev(idx)) * (a.fp_z(idx) - a.fp_z_prev(idx));
      }
      a.consensus_residual = std::sqrt(res);
      a.z_change = std::sqrt(change);
      a.inner_done = a.consensus_residual < cp.eps_x && a.z_change < cp.eps_x;
    }, &sink);
    for (double ms : sink) elapsed += ms;

    bool all = true;
    for (int i = 0; i < count; ++i) {
      if (options_.keep_stats) {
        consensus_stats_.push_back({step_, outer, inner, i, agents_[i]->consensus_residual});
      }
      all = all && agents_[i]->inner_done;
    }
    if (all) return;
  }
  double worst = 0.0;
  for (const auto& a : agents_) worst = std::max(worst, a->consensus_residual);
  std::ostringstream msg;
  msg << "consensus loop: inner iteration limit " << cp.max_inner << " reached at outer iteration " << outer
      << " (residual " << worst << ")";
  throw SolverError(msg.str());
}

StepResult DistributedMpc::solve(const Vector& measured_state) {
  const SubsystemPartition& part = problem_.model().partition();
  if (measured_state.size() != part.n()) throw std::invalid_argument("solve: measured state has wrong size");
  const int count = static_cast<int>(agents_.size());
  ++step_;
  StepResult result;
  SolveReport& report = result.report;
  const std::size_t msgs_before = bus_.total_messages();
  const std::size_t bytes_before = bus_.total_bytes();

  std::vector<double> setup_sink;
  const auto measure_start = Clock::now();
  measure(measured_state);
  setup_sink.push_back(elapsed_ms(measure_start) / std::max(1, count));
  const bool warm = options_.admm.warm_start && has_solution_;
  const bool reset_copies = !warm || footprints_changed_;
  footprints_changed_ = false;
  if (!warm) rho_ = options_.admm.rho;
  const double mu = options_.algorithm == Algorithm::coupled ? options_.consensus.mu : 0.0;
  run_phase([&](int i) {
    Agent& a = *agents_[i];
    a.sub = std::make_unique<RowSubproblem>(a.spec, a.x0_slices, rho_, mu, options_.qp);
    const auto row_size = a.rows.size();
    const auto n_rows = static_cast<Eigen::Index>(a.col_rows.size());
    const auto n_cols = static_cast<Eigen::Index>(a.cols.size());
    const auto fp = static_cast<Eigen::Index>(a.spec.footprint_size());
    if (!warm) {
      a.phi = Vector::Zero(row_size);
      a.psi = Vector::Zero(row_size);
      a.lambda = Vector::Zero(row_size);
      a.col_phi = Matrix::Zero(n_rows, n_cols);
      a.col_psi = Matrix::Zero(n_rows, n_cols);
      a.col_lambda = Matrix::Zero(n_rows, n_cols);
    }
    if (reset_copies) {
      a.fp_x = Vector::Zero(fp);
      a.fp_z = Vector::Zero(fp);
      a.fp_y = Vector::Zero(fp);
    }
    a.done = false;
  }, &setup_sink);
  for (double ms : setup_sink) report.setup_ms += ms;

  std::vector<double> primal_history;
  std::vector<double> dual_history;
  for (int k = 1; k <= options_.admm.max_iter; ++k) {
    double elapsed = 0.0;
    if (options_.algorithm == Algorithm::decoupled) {
      decoupled_row_phase(k, elapsed);
    } else {
      coupled_row_phase(k, elapsed, report.inner_iterations);
    }

    // Row owners ship their new rows to the column owners.
    std::vector<double> sink;
    const RoundId phi_round{next_round(), step_, k, 0, PayloadKind::phi_rows};
    run_phase([&](int i) {
      Agent& a = *agents_[i];
      a.outbox.clear();
      for (std::size_t p = 0; p < a.row_peers.size(); ++p) {
        const int j = a.row_peers[p];
        const int begin = part.state_offset(j);
        auto blocks = fill_blocks(a.phi_plans[p], a.phi);
        if (j == i) {
          for (const auto& b : blocks) {
            for (std::size_t r = 0; r < b.rows.size(); ++r) {
              const int lr = index_in(a.col_rows, b.rows[r]);
              for (std::size_t c = 0; c < b.cols.size(); ++c) {
                a.col_phi(lr, b.cols[c] - begin) = b.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
              }
            }
          }
          continue;
        }
        a.outbox.push_back(Message{phi_round, i, j, PayloadKind::phi_rows, std::move(blocks)});
      }
    }, &sink);
    deliver(phi_round);

    // Column owners project and ship the result back.
    const RoundId psi_round{next_round(), step_, k, 0, PayloadKind::psi_cols};
    run_phase([&](int i) {
      Agent& a = *agents_[i];
      const int begin = part.state_offset(i);
      for (int peer : a.col_peers) {
        if (peer == i) continue;
        for (const auto& b : expect_message(a.inbox, peer, PayloadKind::phi_rows).blocks) {
          for (std::size_t r = 0; r < b.rows.size(); ++r) {
            const int lr = index_in(a.col_rows, b.rows[r]);
            if (lr < 0) throw ProtocolError("phi_rows payload outside the column support");
            for (std::size_t c = 0; c < b.cols.size(); ++c) {
              a.col_phi(lr, b.cols[c] - begin) = b.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
            }
          }
        }
      }
      a.col_psi = column_update(a.projector, a.col_phi, a.col_lambda);
      a.col_lambda = dual_update(a.col_phi, a.col_psi, a.col_lambda);
      a.outbox.clear();
      for (std::size_t p = 0; p < a.col_peers.size(); ++p) {
        const int peer = a.col_peers[p];
        const auto& local = a.psi_rows_for_peer[p];
        Block b;
        b.cols = a.cols;
        b.values.resize(static_cast<Eigen::Index>(local.size()), static_cast<Eigen::Index>(a.cols.size()));
        for (std::size_t r = 0; r < local.size(); ++r) {
          b.rows.push_back(a.col_rows[local[r]]);
          b.values.row(static_cast<Eigen::Index>(r)) = a.col_psi.row(local[r]);
        }
        if (peer == i) {
          a.self_psi = std::move(b);
          continue;
        }
        a.outbox.push_back(Message{psi_round, i, peer, PayloadKind::psi_cols, {std::move(b)}});
      }
    }, &sink);
    deliver(psi_round);

    // Row owners take the projected rows and update their duals.
    run_phase([&](int i) {
      Agent& a = *agents_[i];
      a.psi_prev = a.psi;
      const std::vector<Block> self{a.self_psi};
      for (int peer : a.row_peers) {
        const auto& blocks = peer == i ? self : expect_message(a.inbox, peer, PayloadKind::psi_cols).blocks;
        for (const auto& b : blocks) {
          for (std::size_t r = 0; r < b.rows.size(); ++r) {
            const int k = index_in(a.rows.rows, b.rows[r]);
            if (k < 0) throw ProtocolError("psi_cols payload names a row the receiver does not own");
            const auto& cols = a.rows.cols[k];
            for (std::size_t c = 0; c < b.cols.size(); ++c) {
              const int pos = index_in(cols, b.cols[c]);
              if (pos < 0) throw ProtocolError("psi_cols payload outside the row support");
              a.psi(a.rows.offsets[k] + pos) = b.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
            }
          }
        }
      }
      a.lambda = dual_update(a.phi, a.psi, a.lambda);
      a.primal = (a.phi - a.psi).norm();
      a.dual = (a.psi - a.psi_prev).norm();
      a.done = a.primal <= options_.admm.eps_p && a.dual <= options_.admm.eps_d;
    }, &sink);
    for (double ms : sink) elapsed += ms;
    report.per_iteration_ms.push_back(elapsed);
    report.iteration_ms += elapsed;
    report.iterations = k;

    bool all = true;
    double worst_p = 0.0;
    double worst_d = 0.0;
    for (int i = 0; i < count; ++i) {
      const Agent& a = *agents_[i];
      if (options_.keep_stats) admm_stats_.push_back({step_, k, i, a.primal, a.dual});
      worst_p = std::max(worst_p, a.primal);
      worst_d = std::max(worst_d, a.dual);
      all = all && a.done;
    }
    primal_history.push_back(worst_p);
    dual_history.push_back(worst_d);
    report.primal_residual = worst_p;
    report.dual_residual = worst_d;
    if (hook_) hook_(k, *this);
    if (all) {
      report.converged = true;
      break;
    }

    const AdmmParams& ap = options_.admm;
    if (ap.adapt_every > 0 && k % ap.adapt_every == 0) {
      double scale = 1.0;
      if (worst_p > ap.adapt_ratio * worst_d) scale = ap.adapt_factor;
      if (worst_d > ap.adapt_ratio * worst_p) scale = 1.0 / ap.adapt_factor;
      if (scale != 1.0) {
        rho_ *= scale;
        // Scaled duals carry a factor 1/rho.
        std::vector<double> adapt_sink;
        run_phase([&](int i) {
          Agent& a = *agents_[i];
          a.lambda /= scale;
          a.col_lambda /= scale;
          a.sub = std::make_unique<RowSubproblem>(a.spec, a.x0_slices, rho_, mu, options_.qp);
        }, &adapt_sink);
        for (double ms : adapt_sink) {
          report.iteration_ms += ms;
          report.per_iteration_ms.back() += ms;
        }
      }
    }
  }
  report.rho = rho_;
  report.messages = bus_.total_messages() - msgs_before;
  report.bytes = bus_.total_bytes() - bytes_before;
  if (!report.converged && options_.throw_on_limit) {
    std::ostringstream msg;
    msg << "ADMM: iteration limit " << options_.admm.max_iter << " reached (primal " << report.primal_residual
        << ", dual " << report.dual_residual << ")";
    throw AdmmLimitError(msg.str(), primal_history, dual_history);
  }
  has_solution_ = true;

  // Each agent applies its own first input; the harness collects them.
  const HorizonSpec& h = problem_.horizon();
  result.u = Vector::Zero(part.p());
  result.predicted.x = Matrix::Zero(part.n(), h.steps() + 1);
  result.predicted.u = Matrix::Zero(part.p(), h.steps());
  for (const auto& agent : agents_) {
    const Agent& a = *agent;
    for (std::size_t k = 0; k < a.rows.rows.size(); ++k) {
      const double value = a.phi.segment(a.rows.offsets[k], a.rows.row_size(k)).dot(a.x0_slices[k]);
      const auto info = h.row_info(a.rows.rows[k]);
      if (info.kind == HorizonSpec::Kind::state) {
        result.predicted.x(info.component, info.time) = value;
      } else {
        result.predicted.u(info.component, info.time) = value;
        if (info.time == 0) result.u(info.component) = value;
      }
    }
  }
  return result;
}

ResponseColumn DistributedMpc::assemble_phi() const {
  const HorizonSpec& h = problem_.horizon();
  ResponseColumn out{h, Matrix::Zero(h.rows(), h.n())};
  for (const auto& a : agents_) {
    if (a->phi.size() != a->rows.size()) continue;
    for (std::size_t k = 0; k < a->rows.rows.size(); ++k) {
      for (std::size_t c = 0; c < a->rows.cols[k].size(); ++c) {
        out.phi(a->rows.rows[k], a->rows.cols[k][c]) = a->phi(a->rows.offsets[k] + static_cast<Eigen::Index>(c));
      }
    }
  }
  return out;
}

ResponseColumn DistributedMpc::assemble_psi() const {
  const HorizonSpec& h = problem_.horizon();
  ResponseColumn out{h, Matrix::Zero(h.rows(), h.n())};
  for (const auto& a : agents_) {
    if (a->psi.size() != a->rows.size()) continue;
    for (std::size_t k = 0; k < a->rows.rows.size(); ++k) {
      for (std::size_t c = 0; c < a->rows.cols[k].size(); ++c) {
        out.phi(a->rows.rows[k], a->rows.cols[k][c]) = a->psi(a->rows.offsets[k] + static_cast<Eigen::Index>(c));
      }
    }
  }
  return out;
}

std::vector<std::pair<int, double>> DistributedMpc::footprint_values(int agent) const {
  const Agent& a = *agents_.at(agent);
  std::vector<std::pair<int, double>> out;
  for (std::size_t k = 0; k < a.spec.footprint_size() && static_cast<Eigen::Index>(k) < a.fp_x.size(); ++k) {
    out.emplace_back(a.spec.footprint_row(k), a.fp_x(static_cast<Eigen::Index>(k)));
  }
  return out;
}

namespace {

AlgorithmResult one_shot(const MpcProblem& problem, const Vector& x0, EngineOptions options, Scheduler& scheduler) {
  options.keep_stats = true;
  options.admm.warm_start = false;
  DistributedMpc engine(problem, options, scheduler);
  AlgorithmResult out;
  out.step = engine.solve(x0);
  out.phi = engine.assemble_phi();
  out.psi = engine.assemble_psi();
  out.admm_stats = engine.admm_stats();
  out.consensus_stats = engine.consensus_stats();
  return out;
}

}  // namespace

AlgorithmResult solve_decoupled(const MpcProblem& problem, int radius, const Vector& x0, const AdmmParams& params,
                                Scheduler& scheduler) {
  EngineOptions options;
  options.algorithm = Algorithm::decoupled;
  options.radius = radius;
  options.admm = params;
  return one_shot(problem, x0, options, scheduler);
}

AlgorithmResult solve_coupled(const MpcProblem& problem, int radius, const Vector& x0, const AdmmParams& admm,
                              const ConsensusParams& consensus, Scheduler& scheduler) {
  EngineOptions options;
  options.algorithm = Algorithm::coupled;
  options.radius = radius;
  options.admm = admm;
  options.consensus = consensus;
  return one_shot(problem, x0, options, scheduler);
}

}  // namespace dlmpc

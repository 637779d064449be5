#include "dlmpc/experiment.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

namespace dlmpc {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !(in >> std::ws).eof()) throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + value + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw std::invalid_argument("config: empty list for " + key);
  return out;
}

std::string join(const std::vector<int>& values) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) out += (k ? "," : "") + std::to_string(values[k]);
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"system", [](auto& c, auto&, auto& v) { c.system = v; }},
      {"model_path", [](auto& c, auto&, auto& v) { c.model_path = v; }},
      {"N", [](auto& c, auto& k, auto& v) { c.subsystems = parse_number<int>(k, v); }},
      {"d", [](auto& c, auto& k, auto& v) { c.radius = parse_number<int>(k, v); }},
      {"T", [](auto& c, auto& k, auto& v) { c.horizon = parse_number<int>(k, v); }},
      {"dt", [](auto& c, auto& k, auto& v) { c.dt = parse_number<double>(k, v); }},
      {"scenario", [](auto& c, auto&, auto& v) { c.scenario = v; }},
      {"terminal_constraint", [](auto& c, auto& k, auto& v) { c.terminal_constraint = parse_bool(k, v); }},
      {"controller", [](auto& c, auto&, auto& v) { c.controller = v; }},
      {"steps", [](auto& c, auto& k, auto& v) { c.steps = parse_number<int>(k, v); }},
      {"rho", [](auto& c, auto& k, auto& v) { c.rho = parse_number<double>(k, v); }},
      {"adapt_every", [](auto& c, auto& k, auto& v) { c.adapt_every = parse_number<int>(k, v); }},
      {"adapt_ratio", [](auto& c, auto& k, auto& v) { c.adapt_ratio = parse_number<double>(k, v); }},
      {"mu", [](auto& c, auto& k, auto& v) { c.mu = parse_number<double>(k, v); }},
      {"eps_p", [](auto& c, auto& k, auto& v) { c.eps_p = parse_number<double>(k, v); }},
      {"eps_d", [](auto& c, auto& k, auto& v) { c.eps_d = parse_number<double>(k, v); }},
      {"eps_x", [](auto& c, auto& k, auto& v) { c.eps_x = parse_number<double>(k, v); }},
      {"max_iter", [](auto& c, auto& k, auto& v) { c.max_iter = parse_number<int>(k, v); }},
      {"max_inner", [](auto& c, auto& k, auto& v) { c.max_inner = parse_number<int>(k, v); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"output_dir", [](auto& c, auto&, auto& v) { c.output_dir = v; }},
      {"scheduler", [](auto& c, auto&, auto& v) { c.scheduler = v; }},
      {"threads", [](auto& c, auto& k, auto& v) { c.threads = parse_number<int>(k, v); }},
      {"angle_gap", [](auto& c, auto& k, auto& v) { c.angle_gap = parse_number<double>(k, v); }},
      {"constraint_after", [](auto& c, auto& k, auto& v) { c.constraint_after = parse_number<double>(k, v); }},
      {"state_bound", [](auto& c, auto& k, auto& v) { c.state_bound = parse_number<double>(k, v); }},
      {"input_bound", [](auto& c, auto& k, auto& v) { c.input_bound = parse_number<double>(k, v); }},
      {"difference_bound", [](auto& c, auto& k, auto& v) { c.difference_bound = parse_number<double>(k, v); }},
      {"sweep_n", [](auto& c, auto& k, auto& v) { c.sweep_n = parse_list(k, v); }},
      {"sweep_d", [](auto& c, auto& k, auto& v) { c.sweep_d = parse_list(k, v); }},
      {"bench_horizon", [](auto& c, auto& k, auto& v) { c.bench_horizon = parse_number<int>(k, v); }},
      {"bench_steps", [](auto& c, auto& k, auto& v) { c.bench_steps = parse_number<int>(k, v); }},
      {"fault", [](auto& c, auto&, auto& v) { c.fault = v; }},
      {"fault_agent", [](auto& c, auto& k, auto& v) { c.fault_agent = parse_number<int>(k, v); }},
  };
  return table;
}

bool is_case(const std::string& s) { return s == "c1" || s == "c2" || s == "c3" || s == "c4"; }
bool is_pendulum_scenario(const std::string& s) { return s == "s1" || s == "s2" || s == "s3"; }

}  // namespace

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second(cfg, key, trim(value));
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_config(in);
}

void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (cfg.system != "pendulum_chain" && cfg.system != "benchmark_chain" && cfg.system != "import") fail("unknown system " + cfg.system);
  if (cfg.system == "import" && cfg.model_path.empty()) fail("system = import needs model_path");
  if (!is_case(cfg.scenario) && !is_pendulum_scenario(cfg.scenario)) fail("unknown scenario " + cfg.scenario);
  if ((cfg.scenario == "s2" || cfg.scenario == "s3") && cfg.system != "pendulum_chain") {
    fail("scenario " + cfg.scenario + " needs the pendulum chain");
  }
  if (cfg.subsystems <= 0 || cfg.horizon <= 0 || cfg.radius < 0 || cfg.steps < 0) fail("N, T must be positive and d, steps nonnegative");
  if (cfg.adapt_every < 0) fail("adapt_every must be nonnegative");
  if (!(cfg.adapt_ratio > 1)) fail("adapt_ratio must exceed 1");
  if (!(cfg.dt > 0) || !(cfg.rho > 0) || !(cfg.mu > 0) || !(cfg.eps_p > 0) || !(cfg.eps_d > 0) || !(cfg.eps_x > 0)) {
    fail("dt, rho, mu and tolerances must be positive");
  }
  if (cfg.max_iter <= 0 || cfg.max_inner <= 0) fail("iteration limits must be positive");
  if (!(cfg.angle_gap > 0) || !(cfg.state_bound > 0) || !(cfg.input_bound > 0) || !(cfg.difference_bound > 0)) {
    fail("constraint bounds must be positive");
  }
  if (!cfg.controller.empty()) parse_controller(cfg.controller);
  if (cfg.scheduler != "sequential" && cfg.scheduler != "parallel") fail("unknown scheduler " + cfg.scheduler);
  if (cfg.fault != "none" && cfg.fault != "far_model_read" && cfg.fault != "far_message") fail("unknown fault " + cfg.fault);
  for (int n : cfg.sweep_n) {
    if (n <= 0) fail("sweep_n entries must be positive");
  }
  for (int d : cfg.sweep_d) {
    if (d < 0) fail("sweep_d entries must be nonnegative");
  }
  if (cfg.bench_horizon <= 0 || cfg.bench_steps <= 0) fail("benchmark horizon and steps must be positive");
}

std::string describe(const ExperimentConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "system = " << c.system << "\n";
  if (!c.model_path.empty()) out << "model_path = " << c.model_path << "\n";
  out << "N = " << c.subsystems << "\nd = " << c.radius << "\nT = " << c.horizon << "\ndt = " << c.dt
      << "\nscenario = " << c.scenario << "\nterminal_constraint = " << (c.terminal_constraint ? "true" : "false") << "\n";
  if (!c.controller.empty()) out << "controller = " << c.controller << "\n";
  out << "steps = " << c.steps << "\nrho = " << c.rho << "\nadapt_every = " << c.adapt_every << "\nadapt_ratio = " << c.adapt_ratio << "\nmu = " << c.mu << "\neps_p = " << c.eps_p
      << "\neps_d = " << c.eps_d << "\neps_x = " << c.eps_x << "\nmax_iter = " << c.max_iter
      << "\nmax_inner = " << c.max_inner << "\nseed = " << c.seed << "\noutput_dir = " << c.output_dir
      << "\nscheduler = " << c.scheduler << "\nthreads = " << c.threads << "\nangle_gap = " << c.angle_gap
      << "\nconstraint_after = " << c.constraint_after << "\nstate_bound = " << c.state_bound
      << "\ninput_bound = " << c.input_bound << "\ndifference_bound = " << c.difference_bound
      << "\nsweep_n = " << join(c.sweep_n) << "\nsweep_d = " << join(c.sweep_d)
      << "\nbench_horizon = " << c.bench_horizon << "\nbench_steps = " << c.bench_steps << "\nfault = " << c.fault
      << "\nfault_agent = " << c.fault_agent << "\n";
  return out.str();
}

Vector seeded_state(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector x(n);
  for (int k = 0; k < n; ++k) x(k) = -1.0 + 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return x;
}

SystemModel build_system(const ExperimentConfig& cfg) {
  if (cfg.system == "pendulum_chain") {
    PendulumParams params;
    params.dt = cfg.dt;
    return build_pendulum_chain(cfg.subsystems, params);
  }
  if (cfg.system == "benchmark_chain") return build_benchmark_chain(cfg.subsystems);
  return load_model(cfg.model_path);
}

namespace {

std::vector<int> neighbors(const InterconnectionGraph& graph, int i) {
  std::vector<int> out;
  for (int j : graph.predecessors(i)) {
    if (j != i) out.push_back(j);
  }
  return out;
}

/// Trajectory indices of subsystem i's state at time t.
std::vector<int> state_rows(const HorizonSpec& h, const SubsystemPartition& part, int i, int t) {
  std::vector<int> out;
  for (int k = 0; k < part.state_dim(i); ++k) out.push_back(h.x_row(t, part.state_offset(i) + k));
  return out;
}

std::vector<int> input_rows(const HorizonSpec& h, const SubsystemPartition& part, int i, int t) {
  std::vector<int> out;
  for (int k = 0; k < part.input_dim(i); ++k) out.push_back(h.u_row(t, part.input_offset(i) + k));
  return out;
}

void add_identity_term(MpcProblem& mp, int owner, std::vector<int> rows) {
  const auto size = static_cast<Eigen::Index>(rows.size());
  if (size == 0) return;
  mp.add_cost({owner, std::move(rows), Matrix::Identity(size, size), Vector()});
}

void add_box(MpcProblem& mp, int owner, const std::vector<int>& rows, double bound) {
  for (int r : rows) {
    mp.add_constraint({owner, {r}, Vector::Constant(1, 1.0), bound, false});
    mp.add_constraint({owner, {r}, Vector::Constant(1, -1.0), bound, false});
  }
}

void add_abs_difference(MpcProblem& mp, int owner, int a, int b, double bound) {
  Vector c(2);
  c << 1.0, -1.0;
  mp.add_constraint({owner, {a, b}, c, bound, false});
  mp.add_constraint({owner, {a, b}, -c, bound, false});
}

/// Weight of (v_i - mean_j v_j)' (v_i - mean_j v_j) over the stacked
/// [v_i; v_j1; ...], each block of size `dim`.
Matrix deviation_weight(int dim, std::size_t count) {
  const auto blocks = static_cast<Eigen::Index>(count + 1);
  Matrix c = Matrix::Zero(dim, dim * blocks);
  c.leftCols(dim).setIdentity();
  for (Eigen::Index b = 1; b < blocks; ++b) {
    c.middleCols(b * dim, dim) = -Matrix::Identity(dim, dim) / static_cast<double>(count);
  }
  return c.transpose() * c;
}

/// Adds the term to the problem (when `mp` is set) and its time-invariant
/// counterpart on the global state to `q`.
void add_deviation(MpcProblem* mp, Matrix* q, const SubsystemPartition& part, const HorizonSpec* h, int t, int i,
                   const std::vector<int>& nbrs, int component_count, bool first_only) {
  if (nbrs.empty()) return;
  const int dim = first_only ? 1 : component_count;
  const Matrix w = deviation_weight(dim, nbrs.size());
  std::vector<int> comps;
  auto push = [&](int s) {
    for (int k = 0; k < dim; ++k) comps.push_back(part.state_offset(s) + k);
  };
  push(i);
  for (int j : nbrs) push(j);
  if (mp) {
    std::vector<int> rows;
    for (int c : comps) rows.push_back(h->x_row(t, c));
    mp->add_cost({i, rows, w, Vector()});
  }
  if (q) {
    for (std::size_t a = 0; a < comps.size(); ++a) {
      for (std::size_t b = 0; b < comps.size(); ++b) {
        (*q)(comps[a], comps[b]) += w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
    }
  }
}

}  // namespace

Scenario build_scenario(const ExperimentConfig& cfg) {
  validate(cfg);
  Scenario sc;
  sc.name = cfg.scenario;
  sc.model = build_system(cfg);
  const SubsystemPartition part = sc.model.partition();
  const InterconnectionGraph graph = build_interconnection_graph(sc.model);
  const int count = part.count();
  const std::string s = cfg.scenario;
  sc.coupled = s == "s2" || s == "s3" || s == "c3" || s == "c4";
  sc.constrained = s == "s3" || s == "c2" || s == "c4";
  sc.controller = cfg.controller.empty() ? (sc.coupled ? Controller::algorithm2 : Controller::algorithm1)
                                         : parse_controller(cfg.controller);
  sc.x0 = seeded_state(part.n(), cfg.seed);
  if (s == "s2" || s == "s3") {
    for (int i = 0; i < count; ++i) {
      if (part.state_dim(i) != 2) throw std::invalid_argument("scenario " + s + " needs [angle, rate] subsystems");
    }
  }

  // Closed-loop stage cost matching the per-step terms.
  StageCost stage{Matrix::Zero(part.n(), part.n()), Matrix::Identity(part.p(), part.p())};
  for (int i = 0; i < count; ++i) {
    const std::vector<int> nbrs = neighbors(graph, i);
    if (s == "s2" || s == "s3") {
      add_deviation(nullptr, &stage.state_weight, part, nullptr, 0, i, nbrs, 2, true);
      stage.state_weight(part.state_offset(i) + 1, part.state_offset(i) + 1) += 1.0;
    } else {
      for (int k = 0; k < part.state_dim(i); ++k) stage.state_weight(part.state_offset(i) + k, part.state_offset(i) + k) += 1.0;
      if (s == "c3" || s == "c4") add_deviation(nullptr, &stage.state_weight, part, nullptr, 0, i, nbrs, part.state_dim(i), false);
    }
  }

  const SystemModel model = sc.model;
  const ExperimentConfig c = cfg;
  sc.schedule = [model, c, graph, stage](int tau) {
    const SubsystemPartition& part = model.partition();
    MpcProblem mp(model, c.horizon);
    const HorizonSpec& h = mp.horizon();
    const std::string& s = c.scenario;
    for (int i = 0; i < part.count(); ++i) {
      const std::vector<int> nbrs = neighbors(graph, i);
      for (int t = 1; t <= c.horizon; ++t) {
        const auto xs = state_rows(h, part, i, t);
        if (s == "s2" || s == "s3") {
          add_deviation(&mp, nullptr, part, &h, t, i, nbrs, 2, true);
          add_identity_term(mp, i, {xs[1]});
        } else {
          add_identity_term(mp, i, xs);
          if (s == "c3" || s == "c4") add_deviation(&mp, nullptr, part, &h, t, i, nbrs, part.state_dim(i), false);
        }
        if (s == "c2") add_box(mp, i, xs, c.state_bound);
        if (s == "s3" && (tau + t) * c.dt > c.constraint_after + 1e-9) {
          for (int j : nbrs) {
            if (j > i) add_abs_difference(mp, i, xs[0], h.x_row(t, part.state_offset(j)), c.angle_gap);
          }
        }
        if (s == "c4") {
          for (int j : nbrs) {
            if (j > i) add_abs_difference(mp, i, xs[0], h.x_row(t, part.state_offset(j)), c.difference_bound);
          }
        }
      }
      for (int t = 0; t < c.horizon; ++t) {
        const auto us = input_rows(h, part, i, t);
        add_identity_term(mp, i, us);
        if (s == "c2" || s == "c4") add_box(mp, i, us, c.input_bound);
      }
    }
    mp.set_terminal_constraint(c.terminal_constraint);
    mp.set_stage_cost(stage);
    return mp;
  };
  return sc;
}

EngineOptions engine_options(const ExperimentConfig& cfg) {
  EngineOptions o;
  o.radius = cfg.radius;
  o.admm.rho = cfg.rho;
  o.admm.adapt_every = cfg.adapt_every;
  o.admm.adapt_ratio = cfg.adapt_ratio;
  o.admm.eps_p = cfg.eps_p;
  o.admm.eps_d = cfg.eps_d;
  o.admm.max_iter = cfg.max_iter;
  o.consensus.mu = cfg.mu;
  o.consensus.eps_x = cfg.eps_x;
  o.consensus.max_inner = cfg.max_inner;
  o.keep_stats = true;
  o.keep_round_log = true;
  if (cfg.fault == "far_model_read") o.fault = {FaultPlan::Kind::far_model_read, cfg.fault_agent};
  if (cfg.fault == "far_message") o.fault = {FaultPlan::Kind::far_message, cfg.fault_agent};
  return o;
}

QpSettings oracle_settings() {
  QpSettings s;
  s.eps_abs = 1e-10;
  s.max_iter = 200000;
  return s;
}

RunRecord run_simulation(const ExperimentConfig& cfg, const Scenario& scenario, Controller controller,
                         Scheduler* scheduler, bool track_achievability) {
  RecedingOptions opts;
  opts.controller = controller;
  opts.engine = engine_options(cfg);
  opts.oracle = oracle_settings();
  opts.scheduler = scheduler;
  opts.keep_predictions = true;
  opts.track_achievability = track_achievability;
  return receding_horizon(scenario.schedule, scenario.model, scenario.x0, cfg.steps, opts);
}

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& cfg, const std::string& sweep) {
  if (sweep != "N" && sweep != "d") throw std::invalid_argument("benchmark sweep must be N or d");
  const std::vector<std::string> cases =
      is_case(cfg.scenario) && cfg.scenario != "c1" ? std::vector<std::string>{cfg.scenario}
                                                    : std::vector<std::string>{"c1", "c2", "c3", "c4"};
  const std::vector<int>& points = sweep == "N" ? cfg.sweep_n : cfg.sweep_d;
  std::vector<BenchmarkRow> rows;
  SequentialScheduler sequential;
  for (const auto& name : cases) {
    for (int value : points) {
      ExperimentConfig c = cfg;
      c.system = "benchmark_chain";
      c.scenario = name;
      c.controller.clear();
      c.horizon = cfg.bench_horizon;
      c.steps = cfg.bench_steps;
      (sweep == "N" ? c.subsystems : c.radius) = value;
      const Scenario sc = build_scenario(c);
      RecedingOptions opts;
      opts.controller = sc.controller;
      opts.engine = engine_options(c);
      opts.engine.keep_stats = false;
      opts.engine.keep_round_log = false;
      opts.scheduler = &sequential;
      const RunRecord rec = receding_horizon(sc.schedule, sc.model, sc.x0, c.steps, opts);
      if (!rec.complete) throw SolverError("benchmark " + name + " at " + sweep + "=" + std::to_string(value) + ": " + rec.failure);

      BenchmarkRow row;
      row.sweep = sweep;
      row.scenario = name;
      row.subsystems = c.subsystems;
      row.radius = c.radius;
      row.horizon = c.horizon;
      for (const auto& k : rec.counts) {
        row.counts.row_variables = std::max(row.counts.row_variables, k.row_variables);
        row.counts.row_constraints = std::max(row.counts.row_constraints, k.row_constraints);
        row.counts.column_variables = std::max(row.counts.column_variables, k.column_variables);
        row.counts.column_constraints = std::max(row.counts.column_constraints, k.column_constraints);
      }
      const std::size_t first = rec.stats.size() > 1 ? 1 : 0;
      double iters = 0.0;
      double iter_ms = 0.0;
      double step_ms = 0.0;
      for (std::size_t t = first; t < rec.stats.size(); ++t) {
        iters += rec.stats[t].iterations;
        iter_ms += rec.stats[t].iteration_ms;
        step_ms += rec.stats[t].max_agent_ms;
      }
      const double used = static_cast<double>(rec.stats.size() - first);
      row.iterations = iters / used;
      row.runtime_per_iter_ms = iters > 0 ? iter_ms / iters : 0.0;
      row.runtime_per_step_ms = step_ms / used;
      row.audit_passed = rec.audit.passed;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  out << "sweep,case,N,d,T,row_vars,row_constraints,col_vars,col_constraints,iterations,runtime_per_iter_ms,"
         "runtime_per_step_ms,audit_passed\n";
  for (const auto& r : rows) {
    out << r.sweep << ',' << r.scenario << ',' << r.subsystems << ',' << r.radius << ',' << r.horizon << ','
        << r.counts.row_variables << ',' << r.counts.row_constraints << ',' << r.counts.column_variables << ','
        << r.counts.column_constraints << ',' << r.iterations << ',' << r.runtime_per_iter_ms << ','
        << r.runtime_per_step_ms << ',' << (r.audit_passed ? "true" : "false") << '\n';
  }
}

double closed_loop_deviation(const RunRecord& a, const RunRecord& b) {
  const Eigen::Index cols = std::min(a.x.cols(), b.x.cols());
  double worst = 0.0;
  for (Eigen::Index t = 0; t < cols; ++t) {
    const double scale = 1.0 + b.x.col(t).lpNorm<Eigen::Infinity>();
    worst = std::max(worst, (a.x.col(t) - b.x.col(t)).lpNorm<Eigen::Infinity>() / scale);
  }
  return worst;
}

VerifyReport verify(const ExperimentConfig& cfg) {
  VerifyReport report;
  auto add = [&](const std::string& name, bool ok, const std::string& detail) {
    report.checks.push_back({name, ok, detail});
  };
  const Scenario sc = build_scenario(cfg);
  if (sc.controller == Controller::centralized) throw std::invalid_argument("verify needs a distributed controller");

  const LocalizabilityReport loc =
      check_localizability(sc.model, cfg.radius, HorizonSpec(cfg.horizon, sc.model.partition()));
  {
    std::ostringstream d;
    d << "worst residual " << loc.worst_residual << (loc.feasible ? "" : " at column " + std::to_string(loc.worst_column));
    add("localizability", loc.feasible, d.str());
  }
  if (!loc.feasible) {
    report.passed = false;
    return report;
  }

  std::unique_ptr<ParallelScheduler> pool;
  if (cfg.scheduler == "parallel") pool = std::make_unique<ParallelScheduler>(cfg.threads);
  const RunRecord dist = run_simulation(cfg, sc, sc.controller, pool.get(), true);
  const RunRecord oracle = run_simulation(cfg, sc, Controller::centralized);

  add("distributed run completed", dist.complete, dist.complete ? std::to_string(dist.steps()) + " steps" : dist.failure);
  add("oracle run completed", oracle.complete, oracle.complete ? std::to_string(oracle.steps()) + " steps" : oracle.failure);
  {
    const double dev = closed_loop_deviation(dist, oracle);
    std::ostringstream d;
    d << "max relative state deviation " << dev;
    add("nominal equivalence", dist.complete && oracle.complete && dev <= 1e-3, d.str());
  }
  {
    std::ostringstream d;
    d << dist.audit.violations.size() << " violations";
    if (!dist.audit.violations.empty()) {
      d << "; agent " << dist.audit.violations.front().agent << ": " << dist.audit.violations.front().what;
    }
    add("locality audit", dist.audit.passed, d.str());
  }
  {
    double worst = 0.0;
    for (const auto& st : dist.stats) worst = std::max(worst, st.achievability);
    std::ostringstream d;
    d << "worst Psi residual " << worst;
    add("achievability", dist.complete && worst <= 1e-9, d.str());
  }
  report.passed = true;
  for (const auto& c : report.checks) report.passed = report.passed && c.passed;
  return report;
}

}  // namespace dlmpc

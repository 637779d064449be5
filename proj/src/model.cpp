#include "dlmpc/model.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dlmpc {

SubsystemPartition::SubsystemPartition(std::vector<int> state_dims, std::vector<int> input_dims)
    : state_dims_(std::move(state_dims)), input_dims_(std::move(input_dims)) {
  if (state_dims_.size() != input_dims_.size()) {
    throw std::invalid_argument("partition: state and input dimension lists differ in length");
  }
  if (state_dims_.empty()) {
    throw std::invalid_argument("partition: at least one subsystem is required");
  }
  bool any_state = false;
  for (std::size_t i = 0; i < state_dims_.size(); ++i) {
    if (state_dims_[i] < 0 || input_dims_[i] < 0) {
      throw std::invalid_argument("partition: negative dimension for subsystem " + std::to_string(i));
    }
    any_state = any_state || state_dims_[i] > 0;
    state_offsets_.push_back(n_);
    input_offsets_.push_back(p_);
    for (int k = 0; k < state_dims_[i]; ++k) state_owner_.push_back(static_cast<int>(i));
    for (int k = 0; k < input_dims_[i]; ++k) input_owner_.push_back(static_cast<int>(i));
    n_ += state_dims_[i];
    p_ += input_dims_[i];
  }
  if (!any_state) throw std::invalid_argument("partition: all state dimensions are zero");
}

SystemModel::SystemModel(SubsystemPartition partition, const Matrix& A, const Matrix& B, double dt)
    : partition_(std::move(partition)), dt_(dt) {
  const int n = partition_.n();
  const int p = partition_.p();
  if (A.rows() != n || A.cols() != n) {
    throw std::invalid_argument("model: A must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  if (B.rows() != n || B.cols() != p) {
    throw std::invalid_argument("model: B must be " + std::to_string(n) + "x" + std::to_string(p));
  }
  if (!A.allFinite() || !B.allFinite()) throw std::invalid_argument("model: non-finite entries");
  const int N = partition_.count();
  a_blocks_.reserve(static_cast<std::size_t>(N) * N);
  b_blocks_.reserve(static_cast<std::size_t>(N) * N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      a_blocks_.push_back(A.block(partition_.state_offset(i), partition_.state_offset(j),
                                  partition_.state_dim(i), partition_.state_dim(j)));
      b_blocks_.push_back(B.block(partition_.state_offset(i), partition_.input_offset(j),
                                  partition_.state_dim(i), partition_.input_dim(j)));
    }
  }
  dense_a_ = A;
  dense_b_ = B;
}

const Matrix& SystemModel::a_block(int i, int j) const {
  const int N = subsystems();
  if (i < 0 || j < 0 || i >= N || j >= N) throw std::out_of_range("model: block index out of range");
  return a_blocks_[static_cast<std::size_t>(i) * N + j];
}

const Matrix& SystemModel::b_block(int i, int j) const {
  const int N = subsystems();
  if (i < 0 || j < 0 || i >= N || j >= N) throw std::out_of_range("model: block index out of range");
  return b_blocks_[static_cast<std::size_t>(i) * N + j];
}

Vector SystemModel::step(const Vector& x, const Vector& u) const {
  if (x.size() != partition_.n() || u.size() != partition_.p()) {
    throw std::invalid_argument("model: step dimension mismatch");
  }
  return dense_a_ * x + dense_b_ * u;
}

InterconnectionGraph::InterconnectionGraph(int vertices)
    : successors_(static_cast<std::size_t>(vertices)),
      predecessors_(static_cast<std::size_t>(vertices)),
      a_pattern_(static_cast<std::size_t>(vertices) * vertices, false),
      b_pattern_(static_cast<std::size_t>(vertices) * vertices, false) {}

void InterconnectionGraph::add_edge(int from, int to, bool through_a, bool through_b) {
  const int N = vertices();
  if (from < 0 || to < 0 || from >= N || to >= N) throw std::out_of_range("graph: vertex out of range");
  const std::size_t idx = static_cast<std::size_t>(to) * N + from;
  if (through_a) a_pattern_[idx] = true;
  if (through_b) b_pattern_[idx] = true;
  auto insert_sorted = [](std::vector<int>& v, int x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) v.insert(it, x);
  };
  insert_sorted(successors_[from], to);
  insert_sorted(predecessors_[to], from);
}

bool InterconnectionGraph::has_edge(int from, int to) const {
  const auto& s = successors_.at(from);
  return std::binary_search(s.begin(), s.end(), to);
}

bool InterconnectionGraph::a_support(int to, int from) const {
  return a_pattern_.at(static_cast<std::size_t>(to) * vertices() + from);
}

bool InterconnectionGraph::b_support(int to, int from) const {
  return b_pattern_.at(static_cast<std::size_t>(to) * vertices() + from);
}

std::size_t InterconnectionGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& s : successors_) total += s.size();
  return total;
}

InterconnectionGraph build_interconnection_graph(const SystemModel& model, double threshold) {
  const int N = model.subsystems();
  InterconnectionGraph graph(N);
  auto nonzero = [threshold](const Matrix& block) {
    return block.size() > 0 && block.cwiseAbs().maxCoeff() > threshold;
  };
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const bool via_a = nonzero(model.a_block(i, j));
      const bool via_b = nonzero(model.b_block(i, j));
      if (via_a || via_b) graph.add_edge(j, i, via_a, via_b);
    }
  }
  return graph;
}

namespace {

std::vector<int> bfs_ball(const InterconnectionGraph& graph, int source, int radius, bool forward) {
  const int N = graph.vertices();
  if (source < 0 || source >= N) {
    throw std::out_of_range("graph: subsystem index " + std::to_string(source) + " out of range");
  }
  if (radius < 0) throw std::invalid_argument("graph: hop radius must be non-negative");
  std::vector<int> dist(static_cast<std::size_t>(N), -1);
  std::deque<int> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    if (dist[v] == radius) continue;
    const auto& next = forward ? graph.successors(v) : graph.predecessors(v);
    for (int w : next) {
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        queue.push_back(w);
      }
    }
  }
  std::vector<int> ball;
  for (int v = 0; v < N; ++v) {
    if (dist[v] >= 0) ball.push_back(v);
  }
  return ball;
}

}  // namespace

std::vector<int> d_outgoing(const InterconnectionGraph& graph, int i, int d) {
  return bfs_ball(graph, i, d, true);
}

std::vector<int> d_incoming(const InterconnectionGraph& graph, int i, int d) {
  return bfs_ball(graph, i, d, false);
}

SystemModel build_pendulum_chain(int count, const PendulumParams& params) {
  if (count < 2) throw std::invalid_argument("pendulum chain: at least two pendulums required");
  if (!(params.dt > 0.0)) throw std::invalid_argument("pendulum chain: dt must be positive");
  const int n = 2 * count;
  Matrix A = Matrix::Zero(n, n);
  Matrix B = Matrix::Zero(n, count);
  const double h = params.dt;
  for (int i = 0; i < count; ++i) {
    const int th = 2 * i;
    const int om = 2 * i + 1;
    A(th, th) = 1.0;
    A(th, om) = h;
    A(om, th) = -h * params.gravity;
    A(om, om) = 1.0;
    for (int j : {i - 1, i + 1}) {
      if (j < 0 || j >= count) continue;
      // spring and damper act on the difference to each existing neighbor
      A(om, th) -= h * params.spring;
      A(om, om) -= h * params.damper;
      A(om, 2 * j) += h * params.spring;
      A(om, 2 * j + 1) += h * params.damper;
    }
    B(om, i) = h;
  }
  return SystemModel(SubsystemPartition(std::vector<int>(count, 2), std::vector<int>(count, 1)), A, B,
                     params.dt);
}

SystemModel build_benchmark_chain(int count) {
  if (count < 1) throw std::invalid_argument("benchmark chain: at least one subsystem required");
  const int n = 2 * count;
  Matrix A = Matrix::Zero(n, n);
  Matrix B = Matrix::Zero(n, count);
  Eigen::Matrix2d self;
  self << 1.0, 0.1, -0.3, 0.7;
  Eigen::Matrix2d coupling;
  coupling << 0.0, 0.0, 0.1, 0.1;
  for (int i = 0; i < count; ++i) {
    A.block<2, 2>(2 * i, 2 * i) = self;
    if (i > 0) A.block<2, 2>(2 * i, 2 * (i - 1)) = coupling;
    if (i + 1 < count) A.block<2, 2>(2 * i, 2 * (i + 1)) = coupling;
    B(2 * i + 1, i) = 0.1;
  }
  return SystemModel(SubsystemPartition(std::vector<int>(count, 2), std::vector<int>(count, 1)), A, B,
                     0.0);
}

namespace {

nlohmann::json blocks_to_json(const SystemModel& model, bool input) {
  nlohmann::json out = nlohmann::json::array();
  const int N = model.subsystems();
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const Matrix& block = input ? model.b_block(i, j) : model.a_block(i, j);
      const bool all_plain_zero = std::all_of(block.data(), block.data() + block.size(),
                                              [](double v) { return v == 0.0 && !std::signbit(v); });
      if (all_plain_zero) continue;
      std::vector<double> data;
      data.reserve(static_cast<std::size_t>(block.size()));
      for (Eigen::Index r = 0; r < block.rows(); ++r) {
        for (Eigen::Index c = 0; c < block.cols(); ++c) data.push_back(block(r, c));
      }
      out.push_back({{"row", i}, {"col", j}, {"data", data}});
    }
  }
  return out;
}

void blocks_from_json(const nlohmann::json& blocks, const SubsystemPartition& part, bool input,
                      Matrix& dense) {
  for (const auto& b : blocks) {
    const int i = b.at("row").get<int>();
    const int j = b.at("col").get<int>();
    if (i < 0 || j < 0 || i >= part.count() || j >= part.count()) {
      throw std::invalid_argument("model json: block index out of range");
    }
    const int rows = part.state_dim(i);
    const int cols = input ? part.input_dim(j) : part.state_dim(j);
    const auto data = b.at("data").get<std::vector<double>>();
    if (static_cast<int>(data.size()) != rows * cols) {
      throw std::invalid_argument("model json: block (" + std::to_string(i) + "," + std::to_string(j) +
                                  ") has wrong entry count");
    }
    const int r0 = part.state_offset(i);
    const int c0 = input ? part.input_offset(j) : part.state_offset(j);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) dense(r0 + r, c0 + c) = data[static_cast<std::size_t>(r) * cols + c];
    }
  }
}

}  // namespace

std::string model_to_json(const SystemModel& model) {
  nlohmann::json doc;
  doc["format"] = "dlmpc-model";
  doc["version"] = 1;
  doc["dt"] = model.dt();
  doc["state_dims"] = model.partition().state_dims();
  doc["input_dims"] = model.partition().input_dims();
  doc["a_blocks"] = blocks_to_json(model, false);
  doc["b_blocks"] = blocks_to_json(model, true);
  return doc.dump(2);
}

SystemModel model_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  if (doc.value("format", std::string{}) != "dlmpc-model") {
    throw std::invalid_argument("model json: missing or unknown format tag");
  }
  SubsystemPartition part(doc.at("state_dims").get<std::vector<int>>(),
                          doc.at("input_dims").get<std::vector<int>>());
  Matrix A = Matrix::Zero(part.n(), part.n());
  Matrix B = Matrix::Zero(part.n(), part.p());
  blocks_from_json(doc.at("a_blocks"), part, false, A);
  blocks_from_json(doc.at("b_blocks"), part, true, B);
  return SystemModel(part, A, B, doc.value("dt", 0.0));
}

void save_model(const SystemModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << model_to_json(model) << '\n';
}

SystemModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return model_from_json(buffer.str());
}

}  // namespace dlmpc

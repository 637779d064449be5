#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dlmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Sizes and offsets of the per-subsystem blocks [x]_i, [u]_i.
class SubsystemPartition {
 public:
  SubsystemPartition() = default;
  SubsystemPartition(std::vector<int> state_dims, std::vector<int> input_dims);

  int count() const { return static_cast<int>(state_dims_.size()); }
  int n() const { return n_; }
  int p() const { return p_; }

  int state_dim(int i) const { return state_dims_.at(i); }
  int input_dim(int i) const { return input_dims_.at(i); }
  int state_offset(int i) const { return state_offsets_.at(i); }
  int input_offset(int i) const { return input_offsets_.at(i); }

  const std::vector<int>& state_dims() const { return state_dims_; }
  const std::vector<int>& input_dims() const { return input_dims_; }

  /// Subsystem owning global state component k.
  int state_owner(int k) const { return state_owner_.at(k); }
  int input_owner(int k) const { return input_owner_.at(k); }

  bool operator==(const SubsystemPartition& other) const {
    return state_dims_ == other.state_dims_ && input_dims_ == other.input_dims_;
  }

 private:
  std::vector<int> state_dims_;
  std::vector<int> input_dims_;
  std::vector<int> state_offsets_;
  std::vector<int> input_offsets_;
  std::vector<int> state_owner_;
  std::vector<int> input_owner_;
  int n_ = 0;
  int p_ = 0;
};

/// Block-partitioned LTI plant x(t+1) = A x(t) + B u(t) + w(t).
///
/// Blocks are stored densely per (i, j) pair. The global matrices are kept
/// alongside for the plant rollout and the centralized solver.
class SystemModel {
 public:
  SystemModel() = default;
  SystemModel(SubsystemPartition partition, const Matrix& A, const Matrix& B, double dt = 0.0);

  const SubsystemPartition& partition() const { return partition_; }
  int subsystems() const { return partition_.count(); }
  double dt() const { return dt_; }

  /// [A]_{ij}: rows of subsystem i, columns of subsystem j.
  const Matrix& a_block(int i, int j) const;
  const Matrix& b_block(int i, int j) const;

  const Matrix& dense_a() const { return dense_a_; }
  const Matrix& dense_b() const { return dense_b_; }

  /// One step of the plant recursion.
  Vector step(const Vector& x, const Vector& u) const;

 private:
  SubsystemPartition partition_;
  std::vector<Matrix> a_blocks_;
  std::vector<Matrix> b_blocks_;
  Matrix dense_a_;
  Matrix dense_b_;
  double dt_ = 0.0;

};

/// Directed interconnection graph G(A, B).
///
/// Subsystem j influences subsystem i (edge j -> i) whenever [A]_{ij} or
/// [B]_{ij} is nonzero; out-sets therefore follow the direction in which a
/// disturbance propagates.
class InterconnectionGraph {
 public:
  InterconnectionGraph() = default;
  explicit InterconnectionGraph(int vertices);

  int vertices() const { return static_cast<int>(successors_.size()); }

  /// Adds the edge from -> to. Duplicate insertions are ignored.
  void add_edge(int from, int to, bool through_a, bool through_b);

  bool has_edge(int from, int to) const;
  /// [A]_{to,from} is structurally nonzero.
  bool a_support(int to, int from) const;
  bool b_support(int to, int from) const;

  const std::vector<int>& successors(int i) const { return successors_.at(i); }
  const std::vector<int>& predecessors(int i) const { return predecessors_.at(i); }
  std::size_t edge_count() const;

  bool operator==(const InterconnectionGraph& other) const {
    return successors_ == other.successors_ && a_pattern_ == other.a_pattern_ &&
           b_pattern_ == other.b_pattern_;
  }

 private:
  std::vector<std::vector<int>> successors_;
  std::vector<std::vector<int>> predecessors_;
  std::vector<bool> a_pattern_;
  std::vector<bool> b_pattern_;
};

/// A block counts as nonzero when its largest magnitude exceeds `threshold`.
InterconnectionGraph build_interconnection_graph(const SystemModel& model, double threshold = 0.0);

/// Vertices reachable from i in at most d hops (i included), sorted.
std::vector<int> d_outgoing(const InterconnectionGraph& graph, int i, int d);
/// Vertices that reach i in at most d hops (i included), sorted.
std::vector<int> d_incoming(const InterconnectionGraph& graph, int i, int d);

struct PendulumParams {
  double spring = 1.0;   // N/m
  double damper = 3.0;   // Ns/m
  double dt = 0.2;       // s
  double gravity = 10.0; // m/s^2
};

/// Chain of linearized pendulums with states [theta, theta_dot] and one
/// velocity input each, forward-Euler discretized.
SystemModel build_pendulum_chain(int count, const PendulumParams& params = {});

/// Chain of two-state subsystems with fixed benchmark blocks.
SystemModel build_benchmark_chain(int count);

/// Structured text (JSON) serialization. Round trips are bit-exact.
std::string model_to_json(const SystemModel& model);
SystemModel model_from_json(const std::string& text);
void save_model(const SystemModel& model, const std::string& path);
SystemModel load_model(const std::string& path);

}  // namespace dlmpc

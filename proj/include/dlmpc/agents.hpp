#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dlmpc/model.hpp"

namespace dlmpc {

enum class PayloadKind { state_measurement, phi_rows, psi_cols, x_copy, z_value };

const char* payload_name(PayloadKind kind);

/// Identifies one exchange. `sequence` increases strictly over a run; the
/// remaining fields describe where in the algorithm the exchange happens.
struct RoundId {
  long sequence = 0;
  int mpc_step = 0;
  int outer = 0;
  int inner = 0;
  PayloadKind phase = PayloadKind::state_measurement;
};

std::string describe(const RoundId& round);

/// Dense values on the product of explicit global row and column index sets.
struct Block {
  std::vector<int> rows;
  std::vector<int> cols;
  Matrix values;
};

struct Message {
  RoundId round;
  int sender = 0;
  int receiver = 0;
  PayloadKind kind = PayloadKind::phi_rows;
  std::vector<Block> blocks;

  /// 8 bytes per value plus 4 per index.
  std::size_t bytes() const;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Directed channels between agents.
class ChannelTopology {
 public:
  ChannelTopology() = default;
  explicit ChannelTopology(int agents);

  int agents() const { return static_cast<int>(targets_.size()); }
  void allow(int from, int to);
  bool allowed(int from, int to) const;
  /// Sorted receivers reachable from `from`.
  const std::vector<int>& targets(int from) const { return targets_.at(from); }
  std::size_t channel_count() const;

 private:
  std::vector<std::vector<int>> targets_;
};

/// Channel i -> j whenever j lies within d+1 hops of i in either direction.
ChannelTopology build_channels(const InterconnectionGraph& graph, int d);

/// What one agent touched during a run.
struct AgentAccess {
  std::set<std::pair<int, int>> a_blocks;  // (row subsystem, col subsystem)
  std::set<std::pair<int, int>> b_blocks;
  std::set<int> state_reads;                // subsystems whose measured state was read
  std::set<int> destinations;               // receivers of sent messages
  std::size_t messages_sent = 0;
  std::size_t bytes_sent = 0;
  std::size_t messages_received = 0;
  std::size_t bytes_received = 0;
  std::vector<std::string> protocol_violations;

  std::size_t model_blocks_read() const { return a_blocks.size() + b_blocks.size(); }
};

/// One entry per agent; an agent only ever writes its own entry.
class AccessLog {
 public:
  AccessLog() = default;
  explicit AccessLog(int agents) : entries_(static_cast<std::size_t>(agents)) {}

  int agents() const { return static_cast<int>(entries_.size()); }
  AgentAccess& at(int agent) { return entries_.at(agent); }
  const AgentAccess& at(int agent) const { return entries_.at(agent); }

 private:
  std::vector<AgentAccess> entries_;
};

/// Model access for one agent; every block read is logged.
class ModelView {
 public:
  ModelView(const SystemModel& model, AgentAccess& log) : model_(&model), log_(&log) {}

  const SubsystemPartition& partition() const { return model_->partition(); }
  const Matrix& a_block(int i, int j) const;
  const Matrix& b_block(int i, int j) const;

 private:
  const SystemModel* model_;
  AgentAccess* log_;
};

struct MessageLogRow {
  int agent;
  long round;
  std::size_t messages;
  std::size_t bytes;
  std::size_t model_blocks;
};

/// In-process transport with barrier semantics: all messages of a round are
/// validated, then delivered together.
class MessageBus {
 public:
  MessageBus() = default;
  MessageBus(ChannelTopology topology, AccessLog* log, bool keep_round_log = false);

  const ChannelTopology& topology() const { return topology_; }

  /// `outboxes[i]` holds the messages sent by agent i this round. Returns the
  /// inboxes indexed by receiver, each sorted by sender.
  std::vector<std::vector<Message>> exchange(const RoundId& round, std::vector<std::vector<Message>> outboxes);

  std::size_t total_messages() const { return total_messages_; }
  std::size_t total_bytes() const { return total_bytes_; }
  const std::vector<MessageLogRow>& round_log() const { return round_log_; }

 private:
  ChannelTopology topology_;
  AccessLog* log_ = nullptr;
  bool keep_round_log_ = false;
  long last_round_ = -1;
  std::size_t total_messages_ = 0;
  std::size_t total_bytes_ = 0;
  std::vector<MessageLogRow> round_log_;
};

/// The message from `sender` of `kind` in an inbox; missing payloads are a
/// protocol error.
const Message& expect_message(const std::vector<Message>& inbox, int sender, PayloadKind kind);

struct AuditViolation {
  int agent;
  std::string what;
};

struct AuditReport {
  bool passed = true;
  std::vector<AuditViolation> violations;
  std::vector<std::size_t> messages;
  std::vector<std::size_t> bytes;
  std::vector<std::size_t> model_blocks;
};

/// Checks that every agent read model blocks and states, and sent messages,
/// only within d+1 hops (in either direction).
AuditReport audit(const AccessLog& log, const InterconnectionGraph& graph, int d);

/// Runs one unit of work per agent between two barriers.
class Scheduler {
 public:
  virtual ~Scheduler() = default;
  virtual void run(int agents, const std::function<void(int)>& work) = 0;
  virtual const char* name() const = 0;
};

class SequentialScheduler : public Scheduler {
 public:
  void run(int agents, const std::function<void(int)>& work) override;
  const char* name() const override { return "sequential"; }
};

/// Persistent worker pool; agents are claimed dynamically but each agent's
/// work only touches that agent's state, so results do not depend on timing.
class ParallelScheduler : public Scheduler {
 public:
  explicit ParallelScheduler(int threads = 0);
  ~ParallelScheduler() override;
  ParallelScheduler(const ParallelScheduler&) = delete;
  ParallelScheduler& operator=(const ParallelScheduler&) = delete;

  void run(int agents, const std::function<void(int)>& work) override;
  const char* name() const override { return "parallel"; }
  int threads() const { return static_cast<int>(workers_.size()); }

 private:
  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* work_ = nullptr;
  int agents_ = 0;
  int next_ = 0;
  int finished_ = 0;
  long generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

/// Deliberate protocol faults used to exercise the audit.
struct FaultPlan {
  enum class Kind { none, far_model_read, far_message };
  Kind kind = Kind::none;
  int agent = 0;
};

}  // namespace dlmpc

#include "dlmpc/agents.hpp"

#include <algorithm>
#include <sstream>
#include <tuple>

namespace dlmpc {

const char* payload_name(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::state_measurement:
      return "state_measurement";
    case PayloadKind::phi_rows:
      return "phi_rows";
    case PayloadKind::psi_cols:
      return "psi_cols";
    case PayloadKind::x_copy:
      return "x_copy";
    case PayloadKind::z_value:
      return "z_value";
  }
  return "unknown";
}

std::string describe(const RoundId& round) {
  std::ostringstream out;
  out << "round " << round.sequence << " (step " << round.mpc_step << ", outer " << round.outer << ", inner "
      << round.inner << ", " << payload_name(round.phase) << ")";
  return out.str();
}

std::size_t Message::bytes() const {
  std::size_t total = 0;
  for (const auto& b : blocks) {
    total += 8 * static_cast<std::size_t>(b.values.size()) + 4 * (b.rows.size() + b.cols.size());
  }
  return total;
}

ChannelTopology::ChannelTopology(int agents) : targets_(static_cast<std::size_t>(agents)) {
  if (agents < 0) throw std::invalid_argument("ChannelTopology: negative agent count");
}

void ChannelTopology::allow(int from, int to) {
  if (to < 0 || to >= agents()) throw std::out_of_range("ChannelTopology: receiver out of range");
  auto& list = targets_.at(from);
  const auto it = std::lower_bound(list.begin(), list.end(), to);
  if (it == list.end() || *it != to) list.insert(it, to);
}

bool ChannelTopology::allowed(int from, int to) const {
  if (from < 0 || from >= agents()) return false;
  const auto& list = targets_[from];
  return std::binary_search(list.begin(), list.end(), to);
}

std::size_t ChannelTopology::channel_count() const {
  std::size_t total = 0;
  for (const auto& list : targets_) total += list.size();
  return total;
}

ChannelTopology build_channels(const InterconnectionGraph& graph, int d) {
  if (d < 0) throw std::invalid_argument("build_channels: radius must be nonnegative");
  ChannelTopology topo(graph.vertices());
  for (int i = 0; i < graph.vertices(); ++i) {
    for (int j : d_outgoing(graph, i, d + 1)) topo.allow(i, j);
    for (int j : d_incoming(graph, i, d + 1)) topo.allow(i, j);
  }
  return topo;
}

const Matrix& ModelView::a_block(int i, int j) const {
  log_->a_blocks.emplace(i, j);
  return model_->a_block(i, j);
}

const Matrix& ModelView::b_block(int i, int j) const {
  log_->b_blocks.emplace(i, j);
  return model_->b_block(i, j);
}

MessageBus::MessageBus(ChannelTopology topology, AccessLog* log, bool keep_round_log)
    : topology_(std::move(topology)), log_(log), keep_round_log_(keep_round_log) {}

std::vector<std::vector<Message>> MessageBus::exchange(const RoundId& round,
                                                       std::vector<std::vector<Message>> outboxes) {
  const int agents = topology_.agents();
  if (static_cast<int>(outboxes.size()) != agents) throw ProtocolError("exchange: one outbox per agent required");
  if (round.sequence <= last_round_) {
    throw ProtocolError("exchange: " + describe(round) + " does not advance the round sequence");
  }

  // Validate the whole round before delivering anything.
  std::vector<std::tuple<int, int, int>> seen;
  for (int sender = 0; sender < agents; ++sender) {
    for (const auto& msg : outboxes[sender]) {
      const auto where = [&] {
        std::ostringstream out;
        out << "channel " << msg.sender << "->" << msg.receiver << " in " << describe(round);
        return out.str();
      };
      if (msg.sender != sender) throw ProtocolError("exchange: message in the wrong outbox on " + where());
      if (!topology_.allowed(msg.sender, msg.receiver)) {
        if (log_) log_->at(sender).protocol_violations.push_back("out-of-topology send on " + where());
        throw ProtocolError("protocol violation: out-of-topology send on " + where());
      }
      seen.emplace_back(msg.sender, msg.receiver, static_cast<int>(msg.kind));
    }
  }

  std::sort(seen.begin(), seen.end());
  const auto dup = std::adjacent_find(seen.begin(), seen.end());
  if (dup != seen.end()) {
    const auto [from, to, kind] = *dup;
    throw ProtocolError("protocol violation: duplicate " + std::string(payload_name(static_cast<PayloadKind>(kind))) +
                        " payload on channel " + std::to_string(from) + "->" + std::to_string(to) + " in " +
                        describe(round));
  }

  std::vector<std::vector<Message>> inboxes(static_cast<std::size_t>(agents));
  for (int sender = 0; sender < agents; ++sender) {
    std::size_t sent = 0;
    std::size_t bytes = 0;
    for (auto& msg : outboxes[sender]) {
      msg.round = round;
      const std::size_t size = msg.bytes();
      sent += 1;
      bytes += size;
      if (log_) {
        auto& rx = log_->at(msg.receiver);
        rx.messages_received += 1;
        rx.bytes_received += size;
        log_->at(sender).destinations.insert(msg.receiver);
      }
      inboxes[msg.receiver].push_back(std::move(msg));
    }
    total_messages_ += sent;
    total_bytes_ += bytes;
    if (log_) {
      auto& tx = log_->at(sender);
      tx.messages_sent += sent;
      tx.bytes_sent += bytes;
      if (keep_round_log_ && sent > 0) {
        round_log_.push_back({sender, round.sequence, sent, bytes, tx.model_blocks_read()});
      }
    }
  }
  last_round_ = round.sequence;
  return inboxes;
}

const Message& expect_message(const std::vector<Message>& inbox, int sender, PayloadKind kind) {
  for (const auto& msg : inbox) {
    if (msg.sender == sender && msg.kind == kind) return msg;
  }
  throw ProtocolError("protocol error: missing " + std::string(payload_name(kind)) + " payload from agent " +
                      std::to_string(sender));
}

AuditReport audit(const AccessLog& log, const InterconnectionGraph& graph, int d) {
  AuditReport report;
  const int agents = log.agents();
  report.messages.resize(static_cast<std::size_t>(agents));
  report.bytes.resize(static_cast<std::size_t>(agents));
  report.model_blocks.resize(static_cast<std::size_t>(agents));
  for (int i = 0; i < agents; ++i) {
    const AgentAccess& entry = log.at(i);
    std::vector<int> reach = d_incoming(graph, i, d + 1);
    const auto out = d_outgoing(graph, i, d + 1);
    reach.insert(reach.end(), out.begin(), out.end());
    std::sort(reach.begin(), reach.end());
    reach.erase(std::unique(reach.begin(), reach.end()), reach.end());
    auto inside = [&](int j) { return std::binary_search(reach.begin(), reach.end(), j); };
    auto flag = [&](const std::string& what) { report.violations.push_back({i, what}); };

    for (const auto& [r, c] : entry.a_blocks) {
      if (!inside(r) || !inside(c)) {
        flag("model read A[" + std::to_string(r) + "," + std::to_string(c) + "] outside radius d+1");
      }
    }
    for (const auto& [r, c] : entry.b_blocks) {
      if (!inside(r) || !inside(c)) {
        flag("model read B[" + std::to_string(r) + "," + std::to_string(c) + "] outside radius d+1");
      }
    }
    for (int j : entry.state_reads) {
      if (!inside(j)) flag("state read of subsystem " + std::to_string(j) + " outside radius d+1");
    }
    for (int j : entry.destinations) {
      if (!inside(j)) flag("message sent to agent " + std::to_string(j) + " outside radius d+1");
    }
    for (const auto& v : entry.protocol_violations) flag(v);
    report.messages[i] = entry.messages_sent;
    report.bytes[i] = entry.bytes_sent;
    report.model_blocks[i] = entry.model_blocks_read();
  }
  report.passed = report.violations.empty();
  return report;
}

void SequentialScheduler::run(int agents, const std::function<void(int)>& work) {
  for (int i = 0; i < agents; ++i) work(i);
}

ParallelScheduler::ParallelScheduler(int threads) {
  if (threads <= 0) threads = std::max(1u, std::thread::hardware_concurrency());
  for (int k = 0; k < threads; ++k) workers_.emplace_back([this] { worker_loop(); });
}

ParallelScheduler::~ParallelScheduler() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

void ParallelScheduler::worker_loop() {
  long seen = 0;
  for (;;) {
    std::unique_lock<std::mutex> lock(mutex_);
    start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
    if (stop_) return;
    seen = generation_;
    while (next_ < agents_) {
      const int agent = next_++;
      lock.unlock();
      try {
        (*work_)(agent);
      } catch (...) {
        lock.lock();
        if (!error_) error_ = std::current_exception();
        lock.unlock();
      }
      lock.lock();
      if (++finished_ == agents_) done_cv_.notify_all();
    }
  }
}

void ParallelScheduler::run(int agents, const std::function<void(int)>& work) {
  if (agents <= 0) return;
  std::unique_lock<std::mutex> lock(mutex_);
  work_ = &work;
  agents_ = agents;
  next_ = 0;
  finished_ = 0;
  error_ = nullptr;
  ++generation_;
  start_cv_.notify_all();
  done_cv_.wait(lock, [&] { return finished_ == agents_; });
  work_ = nullptr;
  if (error_) std::rethrow_exception(error_);
}

}  // namespace dlmpc

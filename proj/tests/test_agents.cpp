#include <doctest.h>

#include <atomic>

#include "dlmpc/agents.hpp"

using namespace dlmpc;

namespace {

/// Directed path 0 -> 1 -> ... -> count-1 plus self loops.
InterconnectionGraph path_graph(int count) {
  InterconnectionGraph g(count);
  for (int i = 0; i < count; ++i) {
    g.add_edge(i, i, true, true);
    if (i + 1 < count) g.add_edge(i, i + 1, true, false);
  }
  return g;
}

Message scalar_message(int from, int to, PayloadKind kind, double value) {
  Block b;
  b.rows = {0};
  b.cols = {0};
  b.values = Matrix::Constant(1, 1, value);
  return Message{RoundId{}, from, to, kind, {b}};
}

std::vector<std::vector<Message>> empty_outboxes(int agents) { return std::vector<std::vector<Message>>(agents); }

}  // namespace

TEST_CASE("channels cover d+1 hops in both directions") {
  const auto g = path_graph(6);
  const ChannelTopology top = build_channels(g, 1);
  CHECK(top.allowed(0, 2));
  CHECK(top.allowed(2, 0));
  CHECK_FALSE(top.allowed(0, 3));
  CHECK_FALSE(top.allowed(3, 0));
  CHECK(top.targets(3) == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(top.allowed(2, 2));
}

TEST_CASE("message size counts values and indices") {
  Message m = scalar_message(0, 1, PayloadKind::phi_rows, 1.0);
  CHECK(m.bytes() == 8 + 4 * 2);
  m.blocks.front().values = Matrix::Zero(2, 3);
  m.blocks.front().rows = {0, 1};
  m.blocks.front().cols = {0, 1, 2};
  CHECK(m.bytes() == 6 * 8 + 5 * 4);
}

TEST_CASE("bus delivers whole rounds sorted by sender") {
  const auto g = path_graph(4);
  AccessLog log(4);
  MessageBus bus(build_channels(g, 1), &log, true);
  auto out = empty_outboxes(4);
  out[2].push_back(scalar_message(2, 1, PayloadKind::phi_rows, 2.0));
  out[0].push_back(scalar_message(0, 1, PayloadKind::phi_rows, 0.5));
  const RoundId round{1, 0, 1, 0, PayloadKind::phi_rows};
  const auto in = bus.exchange(round, std::move(out));
  REQUIRE(in[1].size() == 2);
  CHECK(in[1][0].sender == 0);
  CHECK(in[1][1].sender == 2);
  CHECK(in[1][0].round.sequence == 1);
  CHECK(expect_message(in[1], 2, PayloadKind::phi_rows).blocks.front().values(0, 0) == 2.0);
  CHECK_THROWS_AS(expect_message(in[1], 3, PayloadKind::phi_rows), ProtocolError);
  CHECK(bus.total_messages() == 2);
  CHECK(log.at(0).messages_sent == 1);
  CHECK(log.at(1).messages_received == 2);
  CHECK(log.at(0).destinations == std::set<int>{1});
  CHECK(bus.round_log().size() == 2);
}

TEST_CASE("bus rejects protocol violations") {
  const auto g = path_graph(5);
  AccessLog log(5);
  MessageBus bus(build_channels(g, 1), &log);
  SUBCASE("out of topology") {
    auto out = empty_outboxes(5);
    out[0].push_back(scalar_message(0, 4, PayloadKind::phi_rows, 1.0));
    CHECK_THROWS_AS(bus.exchange({1, 0, 1, 0, PayloadKind::phi_rows}, std::move(out)), ProtocolError);
    CHECK_FALSE(log.at(0).protocol_violations.empty());
  }
  SUBCASE("duplicate payload") {
    auto out = empty_outboxes(5);
    out[0].push_back(scalar_message(0, 1, PayloadKind::phi_rows, 1.0));
    out[0].push_back(scalar_message(0, 1, PayloadKind::phi_rows, 2.0));
    CHECK_THROWS_AS(bus.exchange({1, 0, 1, 0, PayloadKind::phi_rows}, std::move(out)), ProtocolError);
  }
  SUBCASE("wrong outbox") {
    auto out = empty_outboxes(5);
    out[1].push_back(scalar_message(0, 1, PayloadKind::phi_rows, 1.0));
    CHECK_THROWS_AS(bus.exchange({1, 0, 1, 0, PayloadKind::phi_rows}, std::move(out)), ProtocolError);
  }
  SUBCASE("round sequence must advance") {
    bus.exchange({3, 0, 1, 0, PayloadKind::phi_rows}, empty_outboxes(5));
    CHECK_THROWS_AS(bus.exchange({3, 0, 1, 0, PayloadKind::psi_cols}, empty_outboxes(5)), ProtocolError);
    CHECK_THROWS_AS(bus.exchange({3, 0, 1, 0, PayloadKind::psi_cols}, empty_outboxes(4)), ProtocolError);
  }
}

TEST_CASE("model view logs block reads and the audit checks them") {
  const SystemModel model = build_benchmark_chain(6);
  const InterconnectionGraph g = build_interconnection_graph(model);
  AccessLog log(6);
  {
    ModelView view(model, log.at(2));
    view.a_block(2, 1);
    view.b_block(2, 2);
    log.at(2).state_reads.insert(3);
  }
  CHECK(log.at(2).model_blocks_read() == 2);
  AuditReport ok = audit(log, g, 1);
  CHECK(ok.passed);
  CHECK(ok.model_blocks[2] == 2);

  {
    ModelView view(model, log.at(0));
    view.a_block(5, 5);
  }
  const AuditReport bad = audit(log, g, 1);
  CHECK_FALSE(bad.passed);
  REQUIRE(bad.violations.size() == 1);
  CHECK(bad.violations.front().agent == 0);
}

TEST_CASE("schedulers run every agent once") {
  SequentialScheduler seq;
  ParallelScheduler par(3);
  for (Scheduler* s : {static_cast<Scheduler*>(&seq), static_cast<Scheduler*>(&par)}) {
    std::vector<int> hits(17, 0);
    s->run(17, [&](int i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  }
  CHECK(par.threads() == 3);
  CHECK_THROWS_AS(par.run(4, [](int i) {
    if (i == 2) throw std::runtime_error("boom");
  }), std::runtime_error);
  // The pool survives an exception.
  std::atomic<int> count{0};
  par.run(8, [&](int) { ++count; });
  CHECK(count == 8);
}

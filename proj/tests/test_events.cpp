#include <acnsim/events.hpp>

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

using namespace acnsim;

namespace {

SessionEV session(const std::string& id) { return make_session(id, "S1", 0, 10, 9, 50.0); }

std::vector<std::string> order(const std::vector<Event>& events) {
  std::vector<std::string> out;
  for (const auto& e : events) out.push_back(std::string(e.kind_name()) + "@" + std::to_string(e.timestamp) + ":" + e.session_id());
  return out;
}

}  // namespace

TEST(EventQueue, UnplugBeforePluginAtSameTime) {
  EventQueue q;
  q.enqueue(make_plugin(5, session("a")));
  q.enqueue(make_unplug(5, "b"));
  EXPECT_EQ(order(q.pop_due(5)), (std::vector<std::string>{"unplug@5:b", "plugin@5:a"}));
}

TEST(EventQueue, TimestampOrder) {
  EventQueue q;
  q.enqueue(make_plugin(3, session("a")));
  q.enqueue(make_plugin(1, session("b")));
  EXPECT_EQ(order(q.pop_due(10)), (std::vector<std::string>{"plugin@1:b", "plugin@3:a"}));
}

TEST(EventQueue, StableForEqualKeys) {
  EventQueue q;
  q.enqueue(make_plugin(2, session("A")));
  q.enqueue(make_plugin(2, session("B")));
  EXPECT_EQ(order(q.pop_due(2)), (std::vector<std::string>{"plugin@2:A", "plugin@2:B"}));
}

TEST(EventQueue, PopDueLeavesFutureEvents) {
  EventQueue q;
  q.enqueue(make_unplug(1, "a"));
  q.enqueue(make_unplug(2, "b"));
  q.enqueue(make_unplug(5, "c"));
  EXPECT_EQ(q.pop_due(2).size(), 2u);
  EXPECT_EQ(q.size(), 1u);
  EXPECT_EQ(*q.next_timestamp(), 5);
}

TEST(EventQueue, EmptyQueuePopsNothing) {
  EventQueue q;
  EXPECT_TRUE(q.pop_due(100).empty());
  EXPECT_FALSE(q.next_timestamp());
}

TEST(EventQueue, RecomputeSortsLast) {
  EventQueue q;
  q.enqueue(make_recompute(4));
  q.enqueue(make_plugin(4, session("p")));
  q.enqueue(make_unplug(4, "u"));
  EXPECT_EQ(order(q.pop_due(4)), (std::vector<std::string>{"unplug@4:u", "plugin@4:p", "recompute@4:"}));
}

TEST(EventQueue, NegativeTimestampRejected) { EXPECT_THROW(EventQueue().enqueue(make_unplug(-1, "a")), Error); }

TEST(EventQueue, NoLossOrDuplication) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> t(0, 50), kind(0, 2);
  auto key = [](const Event& e) {
    return std::string(e.kind_name()) + ":" + e.session_id() + "@" + std::to_string(e.timestamp);
  };
  EventQueue q;
  std::multiset<std::string> in, out;
  for (int k = 0; k < 500; ++k) {
    const int ts = t(rng);
    const std::string id = "e" + std::to_string(k);
    const int which = kind(rng);
    Event e = which == 0 ? make_plugin(ts, session(id)) : which == 1 ? make_unplug(ts, id) : make_recompute(ts);
    in.insert(key(e));
    q.enqueue(std::move(e));
  }
  Period last_t = -1;
  int last_p = -1;
  for (Period now = 0; now <= 50; ++now) {
    for (const auto& e : q.pop_due(now)) {
      EXPECT_TRUE(e.timestamp > last_t || (e.timestamp == last_t && e.priority() >= last_p));
      last_t = e.timestamp;
      last_p = e.priority();
      out.insert(key(e));
    }
  }
  EXPECT_TRUE(q.empty());
  EXPECT_EQ(in, out);
}

TEST(EventLog, JsonLinesRoundTrip) {
  EventQueue q;
  SessionEV ev = make_session("a", "S1", 2, 10, 9, 123.456, {BatteryKind::two_stage, 24.0, 0.75, 400.0});
  q.enqueue(make_plugin(2, ev));
  q.enqueue(make_unplug(10, "a"));
  q.enqueue(make_recompute(3));
  std::stringstream ss;
  write_event_log(ss, q);
  EventQueue back = read_event_log(ss);
  std::stringstream again;
  write_event_log(again, back);
  std::stringstream first;
  write_event_log(first, q);
  EXPECT_EQ(first.str(), again.str());
  const auto events = back.pop_due(100);
  ASSERT_EQ(events.size(), 3u);
  const auto& restored = std::get<PluginEvent>(events[0].payload).session;
  EXPECT_EQ(restored.battery.kind, BatteryKind::two_stage);
  EXPECT_DOUBLE_EQ(restored.requested, 123.456);
  EXPECT_DOUBLE_EQ(restored.battery.threshold, 0.75);
}

TEST(EventLog, MalformedLineNamesLine) {
  std::stringstream ss("{\"timestamp\": 1, \"kind\": \"unplug\", \"session_id\": \"a\"}\n{oops\n");
  try {
    read_event_log(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse_error);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

#include <acnsim/algorithms.hpp>
#include <acnsim/engine.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace acnsim;

namespace {

/// Records every call and returns a fixed per-station sequence.
class Spy final : public Algorithm {
 public:
  explicit Spy(std::vector<double> sequence = {16.0}) : sequence_(std::move(sequence)) {}
  std::string name() const override { return "spy"; }
  Schedule schedule(const AlgoView& view) override {
    calls.push_back(view.now);
    Schedule s;
    for (const auto& a : view.sessions) s[a.station_id] = sequence_;
    return s;
  }
  std::vector<Period> calls;

 private:
  std::vector<double> sequence_;
};

class Rogue final : public Algorithm {
 public:
  std::string name() const override { return "rogue"; }
  Schedule schedule(const AlgoView& view) override {
    Schedule s{{"nowhere", {10.0}}};
    for (const auto& a : view.sessions) s[a.station_id] = {-5.0};
    return s;
  }
};

class Throwing final : public Algorithm {
 public:
  std::string name() const override { return "throwing"; }
  Schedule schedule(const AlgoView&) override { throw std::runtime_error("boom"); }
};

Network open_network(std::vector<std::string> ids, double kw = 1000.0) {
  return build_auto_network(ids, kw, Phasing::single);
}

EventQueue one_session(const std::string& station, Period a, Period d, double demand, BatteryProfile p = {}) {
  EventQueue q;
  q.enqueue(make_plugin(a, make_session("s-" + station, station, a, d, d, demand, p)));
  q.enqueue(make_unplug(d, "s-" + station));
  return q;
}

SimConfig config() {
  SimConfig c;
  c.period_minutes = 5.0;
  c.start = parse_datetime("2019-03-04T00:00");
  return c;
}

std::string csv_of(const SimRecord& r) {
  std::ostringstream out;
  write_record_csv(out, r);
  return out.str() + record_summary_json(r).dump();
}

}  // namespace

TEST(Engine, ZeroEventsGiveEmptySeries) {
  Simulator sim(config(), open_network({"S1"}), EventQueue{}, std::make_shared<Uncontrolled>());
  const auto& r = sim.run();
  EXPECT_EQ(r.periods(), 0u);
  EXPECT_TRUE(r.sessions.empty());
}

TEST(Engine, SingleEvUncontrolledDeliversRequest) {
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 2, 20, 100.0), std::make_shared<Uncontrolled>());
  const auto& r = sim.run();
  ASSERT_EQ(r.sessions.size(), 1u);
  EXPECT_DOUBLE_EQ(r.sessions[0].delivered, 100.0);
  EXPECT_EQ(r.periods(), 20u);
}

TEST(Engine, CapacityBindsDelivery) {
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 0, 20, 100.0, {BatteryKind::ideal, 32.0, 0.8, 60.0}),
                std::make_shared<Uncontrolled>());
  EXPECT_DOUBLE_EQ(sim.run().sessions[0].delivered, 60.0);
}

TEST(Engine, SeriesShareOneAxisAndActualNeverExceedsPilot) {
  EventQueue q;
  for (int k = 0; k < 4; ++k) {
    const std::string st = "S" + std::to_string(k);
    q.enqueue(make_plugin(k, make_session("e" + st, st, k, 12 + k, 12 + k, 150.0, {BatteryKind::two_stage, 32, 0.8, 180})));
    q.enqueue(make_unplug(12 + k, "e" + st));
  }
  Simulator sim(config(), open_network({"S0", "S1", "S2", "S3"}, 20.0), q, std::make_shared<SortedSchedule>(SortKey::llf));
  const auto& r = sim.run();
  ASSERT_EQ(r.pilots.size(), r.periods());
  ASSERT_EQ(r.actuals.size(), r.periods());
  ASSERT_EQ(r.currents.size(), r.periods());
  for (std::size_t t = 0; t < r.periods(); ++t) {
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(r.actuals[t][i], r.pilots[t][i] + 1e-12);
  }
  for (const auto& s : r.sessions) {
    double sum = 0.0;
    const std::size_t i = static_cast<std::size_t>(s.station_id[1] - '0');
    for (std::size_t t = 0; t < r.periods(); ++t) sum += r.actuals[t][i];
    EXPECT_NEAR(s.delivered, sum, 1e-9 * std::max(1.0, sum));
  }
}

TEST(Engine, NoEventsMeansScheduleCarriedOver) {
  auto spy = std::make_shared<Spy>(std::vector<double>{10.0});
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 0, 8, 1000.0), spy);
  const auto& r = sim.run();
  EXPECT_EQ(spy->calls, (std::vector<Period>{0}));
  for (std::size_t t = 0; t < r.periods(); ++t) EXPECT_DOUBLE_EQ(r.pilots[t][0], 10.0);
}

TEST(Engine, ScheduleColumnsConsumedThenLastHeld) {
  auto spy = std::make_shared<Spy>(std::vector<double>{5.0, 7.0, 9.0});
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 0, 6, 1000.0), spy);
  const auto& r = sim.run();
  std::vector<double> pilots;
  for (const auto& row : r.pilots) pilots.push_back(row[0]);
  EXPECT_EQ(pilots, (std::vector<double>{5, 7, 9, 9, 9, 9}));
}

TEST(Engine, SimultaneousUnplugAndPluginScheduleOnce) {
  EventQueue q;
  q.enqueue(make_plugin(0, make_session("a", "S1", 0, 5, 5, 1000.0)));
  q.enqueue(make_unplug(5, "a"));
  q.enqueue(make_plugin(5, make_session("b", "S1", 5, 9, 9, 1000.0)));
  q.enqueue(make_unplug(9, "b"));
  auto spy = std::make_shared<Spy>();
  Simulator sim(config(), open_network({"S1"}), q, spy);
  sim.run();
  EXPECT_EQ(spy->calls, (std::vector<Period>{0, 5}));
}

TEST(Engine, FinishesWhenQueueEmptyAndNoSessions) {
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 0, 3, 10.0), std::make_shared<Uncontrolled>());
  int steps = 0;
  while (sim.step() == StepStatus::continued) ++steps;
  EXPECT_EQ(steps, 3);
  EXPECT_TRUE(sim.finished());
  EXPECT_THROW(sim.step(), Error);
}

TEST(Engine, HorizonStopsEarly) {
  SimConfig c = config();
  c.horizon = 4;
  Simulator sim(c, open_network({"S1"}), one_session("S1", 0, 30, 1000.0), std::make_shared<Uncontrolled>());
  const auto& r = sim.run();
  EXPECT_EQ(r.periods(), 4u);
  ASSERT_EQ(r.sessions.size(), 1u);
  EXPECT_DOUBLE_EQ(r.sessions[0].delivered, 128.0);
}

TEST(Engine, UnknownStationAndNegativeRatesBecomeZero) {
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 0, 3, 100.0), std::make_shared<Rogue>());
  const auto& r = sim.run();
  EXPECT_FALSE(r.warnings.empty());
  for (const auto& row : r.pilots) EXPECT_DOUBLE_EQ(row[0], 0.0);
}

TEST(Engine, AlgorithmExceptionAbortsWithContext) {
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 2, 5, 100.0), std::make_shared<Throwing>());
  try {
    sim.run();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::algorithm_failure);
    EXPECT_NE(std::string(e.what()).find("period 2"), std::string::npos);
  }
}

TEST(Engine, RecomputeCadence) {
  SimConfig c = config();
  c.recompute_period = 3;
  auto spy = std::make_shared<Spy>();
  Simulator sim(c, open_network({"S1"}), one_session("S1", 1, 8, 1000.0), spy);
  sim.run();
  EXPECT_EQ(spy->calls, (std::vector<Period>{0, 1, 3, 6}));
}

TEST(Engine, InactiveSessionGetsZeroPilot) {
  Simulator sim(config(), open_network({"S1"}), one_session("S1", 0, 6, 40.0), std::make_shared<Uncontrolled>());
  const auto& r = sim.run();
  EXPECT_DOUBLE_EQ(r.pilots[0][0], 32.0);
  EXPECT_DOUBLE_EQ(r.pilots[1][0], 32.0);
  EXPECT_DOUBLE_EQ(r.actuals[1][0], 8.0);
  EXPECT_DOUBLE_EQ(r.pilots[2][0], 0.0);
}

TEST(Engine, ReplayingExportedEventLogIsBitIdentical) {
  EventQueue q;
  for (int k = 0; k < 6; ++k) {
    const std::string st = "S" + std::to_string(k % 3);
    const Period a = 4 * (k / 3) + k % 3;
    q.enqueue(make_plugin(a, make_session("e" + std::to_string(k), st, a, a + 4, a + 3, 77.7 + k)));
    q.enqueue(make_unplug(a + 4, "e" + std::to_string(k)));
  }
  auto run = [](EventQueue events) {
    Simulator sim(config(), build_auto_network({"S0", "S1", "S2"}, 12.0, Phasing::three), std::move(events),
                  std::make_shared<RoundRobin>());
    return csv_of(sim.run());
  };
  std::stringstream log;
  write_event_log(log, q);
  EXPECT_EQ(run(q), run(read_event_log(log)));
}

TEST(Engine, AlgorithmInfrastructureMustMatch) {
  Simulator sim(config(), open_network({"S1", "S2"}), EventQueue{}, std::make_shared<Uncontrolled>());
  EXPECT_THROW(sim.set_algorithm_infrastructure(build_auto_infrastructure({"S1"}, 10, Phasing::single)), Error);
  EXPECT_NO_THROW(sim.set_algorithm_infrastructure(build_auto_infrastructure({"S1", "S2"}, 10, Phasing::single)));
}

TEST(Engine, RecordCsvRoundTrip) {
  Simulator sim(config(), build_auto_network({"S0", "S1", "S2"}, 9.0, Phasing::three), one_session("S1", 0, 5, 90.0),
                std::make_shared<SortedSchedule>(SortKey::edf));
  const SimRecord r = sim.run();
  std::stringstream csv;
  write_record_csv(csv, r);
  const SimRecord back = read_record(csv, record_summary_json(r));
  std::stringstream again;
  write_record_csv(again, back);
  EXPECT_EQ(again.str(), csv.str());
  EXPECT_EQ(back.aggregate_kw, r.aggregate_kw);
  EXPECT_EQ(back.actuals, r.actuals);
  EXPECT_EQ(back.sessions.size(), r.sessions.size());
}

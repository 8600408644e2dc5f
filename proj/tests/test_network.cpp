#include <acnsim/network.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace acnsim;

namespace {

Infrastructure pair(double angle_b, double limit, double max_rate = 32.0) {
  std::vector<EvseNode> evses{{"A", 0.0, 208.0, PilotModel::continuous(max_rate)},
                              {"B", angle_b, 208.0, PilotModel::continuous(max_rate)}};
  return Infrastructure(evses, {{"line", {{"A", 1.0}, {"B", 1.0}}, limit, false}});
}

Infrastructure balanced_triple(double limit) {
  std::vector<EvseNode> evses{{"A", 0.0, 208.0, PilotModel::continuous(32)},
                              {"B", -120.0, 208.0, PilotModel::continuous(32)},
                              {"C", 120.0, 208.0, PilotModel::continuous(32)}};
  return Infrastructure(evses, {{"line", {{"A", 1.0}, {"B", 1.0}, {"C", 1.0}}, limit, false}});
}

SessionEV ev(const std::string& id, Period arrival, Period departure, double demand) {
  return make_session(id, "", arrival, departure, departure, demand);
}

}  // namespace

TEST(ConstraintCurrents, PhaseSeparatedPairEqualRates) {
  auto infra = pair(-120.0, 16.0);
  EXPECT_NEAR(constraint_currents(infra, {{"A", 16}, {"B", 16}}).at("line"), 16.0, 1e-12);
}

TEST(ConstraintCurrents, SinglePhasorMagnitude) {
  auto infra = pair(-120.0, 16.0);
  EXPECT_NEAR(constraint_currents(infra, {{"A", 16}, {"B", 0}}).at("line"), 16.0, 1e-12);
}

TEST(ConstraintCurrents, BalancedThreePhaseCancels) {
  auto infra = balanced_triple(10.0);
  EXPECT_NEAR(constraint_currents(infra, {{"A", 10}, {"B", 10}, {"C", 10}}).at("line"), 0.0, 1e-9);
}

TEST(ConstraintCurrents, MissingStationsContributeZero) {
  auto infra = pair(0.0, 16.0);
  EXPECT_DOUBLE_EQ(constraint_currents(infra, {{"B", 5}}).at("line"), 5.0);
}

TEST(ConstraintCurrents, RejectsUnknownAndNegative) {
  auto infra = pair(0.0, 16.0);
  try {
    constraint_currents(infra, {{"Z", 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_evse);
  }
  try {
    constraint_currents(infra, {{"A", -1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::negative_rate);
  }
}

TEST(IsFeasible, SpecExamples) {
  auto shifted = pair(-120.0, 16.0);
  EXPECT_TRUE(is_feasible(shifted, {{"A", 16}, {"B", 16}}));
  EXPECT_FALSE(is_feasible(shifted, {{"A", 16.1}, {"B", 16.1}}));
  auto same = pair(0.0, 16.0);
  EXPECT_FALSE(is_feasible(same, {{"A", 9}, {"B", 8}}));
}

TEST(IsFeasible, EnforcesEvseEnvelope) {
  auto infra = pair(0.0, 1000.0, 32.0);
  EXPECT_TRUE(is_feasible(infra, {{"A", 32}}));
  EXPECT_FALSE(is_feasible(infra, {{"A", 32.01}}));
}

TEST(MaxFeasibleRate, SpecExamples) {
  std::vector<EvseNode> one{{"A", 0.0, 208.0, PilotModel::continuous(32)}};
  Infrastructure single(one, {{"line", {{"A", 1.0}}, 32.0, false}});
  EXPECT_DOUBLE_EQ(max_feasible_rate(single, "A", {}, 32.0), 32.0);

  EXPECT_NEAR(max_feasible_rate(pair(0.0, 16.0), "B", {{"A", 16}}, 32.0), 0.0, 0.01);

  // Oracle: fine scan of |16 + b e^{-j120}| <= 16.
  auto shifted = pair(-120.0, 16.0);
  double scan = 0.0;
  for (int k = 0; k <= 32000; ++k) {
    const double b = k * 0.001;
    if (oracle::feasible(shifted, {16.0, b})) scan = b;
  }
  const double got = max_feasible_rate(shifted, "B", {{"A", 16}}, 32.0);
  EXPECT_NEAR(scan, 16.0, 1e-3);
  EXPECT_NEAR(got, scan, 0.01);
  EXPECT_TRUE(is_feasible(shifted, {{"A", 16}, {"B", got}}));
}

TEST(MaxFeasibleRate, InfeasibleFixedRatesThrow) {
  try {
    max_feasible_rate(pair(0.0, 16.0), "B", {{"A", 20}}, 32.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::infeasible_fixed_rates);
  }
}

TEST(NetworkProperties, PositiveHomogeneity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 32.0), scale(0.0, 3.0);
  auto infra = balanced_triple(50.0);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> r{u(rng), u(rng), u(rng)};
    const double c = scale(rng);
    std::vector<double> cr{c * r[0], c * r[1], c * r[2]};
    EXPECT_NEAR(infra.current(0, cr), c * infra.current(0, r), 1e-9);
  }
}

TEST(NetworkProperties, LoweringOneRateCanRaiseMagnitude) {
  auto infra = pair(-120.0, 16.0);
  const double with = infra.current(0, std::vector<double>{16.0, 4.0});
  const double without = infra.current(0, std::vector<double>{16.0, 0.0});
  EXPECT_NEAR(with, std::sqrt(16.0 * 16.0 + 4.0 * 4.0 - 16.0 * 4.0), 1e-9);
  EXPECT_LT(with, without);
}

TEST(NetworkProperties, FeasibilityMatchesIndependentRecomputation) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nevse(1, 5), ncons(1, 4), coin(0, 1);
  std::uniform_real_distribution<double> angle(-180.0, 180.0), coef(-1.5, 1.5), limit(0.0, 60.0), rate(0.0, 32.0);
  int disagreements = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<EvseNode> evses;
    const int n = nevse(rng);
    for (int i = 0; i < n; ++i) evses.push_back({"S" + std::to_string(i), angle(rng), 208.0, PilotModel::continuous(32)});
    std::vector<PhasorConstraint> cons;
    const int m = ncons(rng);
    for (int j = 0; j < m; ++j) {
      PhasorConstraint c{"c" + std::to_string(j), {}, limit(rng), coin(rng) == 1 && j == 0};
      for (int i = 0; i < n; ++i) {
        if (coin(rng)) c.coefficients[evses[i].station_id] = coef(rng);
      }
      cons.push_back(c);
    }
    Infrastructure infra(evses, cons);
    RateMap rates;
    std::vector<double> dense(n);
    for (int i = 0; i < n; ++i) rates[evses[i].station_id] = dense[i] = rate(rng);
    if (is_feasible(infra, rates) != oracle::feasible(infra, dense)) ++disagreements;
  }
  EXPECT_EQ(disagreements, 0);
}

TEST(AutoNetwork, SinglePhaseLimit) {
  auto infra = build_auto_infrastructure({"S1"}, 6.656, Phasing::single, 208.0);
  ASSERT_EQ(infra.constraints().size(), 1u);
  EXPECT_NEAR(infra.constraints()[0].limit, 32.0, 1e-12);
}

TEST(AutoNetwork, ThreePhaseRoundRobin) {
  auto infra = build_auto_infrastructure({"S1", "S2", "S3"}, 30.0, Phasing::three);
  EXPECT_DOUBLE_EQ(infra.evses()[0].phase_angle, 0.0);
  EXPECT_DOUBLE_EQ(infra.evses()[1].phase_angle, -120.0);
  EXPECT_DOUBLE_EQ(infra.evses()[2].phase_angle, 120.0);
}

TEST(AutoNetwork, SixStationsTwoPerPhase) {
  auto infra = build_auto_infrastructure({"S1", "S2", "S3", "S4", "S5", "S6"}, 30.0, Phasing::three);
  int phase_rows = 0;
  for (const auto& c : infra.constraints()) {
    if (c.phase_agnostic) {
      EXPECT_EQ(c.coefficients.size(), 6u);
      continue;
    }
    ++phase_rows;
    EXPECT_EQ(c.coefficients.size(), 2u);
  }
  EXPECT_EQ(phase_rows, 3);
}

TEST(AutoNetwork, AggregateIsPowerCap) {
  const double kw = 30.0;
  auto infra = build_auto_infrastructure({"S1", "S2", "S3"}, kw, Phasing::three, 208.0);
  const auto& agg = infra.constraints().back();
  ASSERT_TRUE(agg.phase_agnostic);
  const double v = infra.evses()[0].voltage;
  EXPECT_NEAR(v, 208.0 / std::sqrt(3.0), 1e-9);
  EXPECT_NEAR(agg.limit * v / 1000.0, kw, 1e-9);
  EXPECT_NEAR(infra.constraints()[0].limit, kw * 1000.0 / (3.0 * v), 1e-9);
}

TEST(AutoNetwork, RejectsBadInput) {
  EXPECT_THROW(build_auto_infrastructure({"S1"}, 0.0, Phasing::single), Error);
  EXPECT_THROW(build_auto_infrastructure({}, 10.0, Phasing::single), Error);
}

TEST(StochasticAssign, FreeSpaceAssigns) {
  Network net = build_auto_network({"S1"}, 10.0, Phasing::single, 208.0, AssignmentMode::stochastic);
  auto a = stochastic_assign(net, ev("e1", 0, 5, 10), 0);
  EXPECT_FALSE(a.queued());
  EXPECT_EQ(*a.station_id, "S1");
  EXPECT_EQ(net.swap_count(), 0u);
}

TEST(StochasticAssign, QueueHeadTakesFreedSpace) {
  Network net = build_auto_network({"S1"}, 10.0, Phasing::single, 208.0, AssignmentMode::stochastic);
  stochastic_assign(net, ev("e1", 0, 1, 10), 0);
  auto a = stochastic_assign(net, ev("e2", 0, 9, 10), 0);
  EXPECT_TRUE(a.queued());
  auto d = net.unplug("e1", 1);
  ASSERT_TRUE(d);
  EXPECT_EQ(*d->successor_session, "e2");
  EXPECT_EQ(net.swap_count(), 1u);
  ASSERT_TRUE(net.slots()[0]);
  EXPECT_EQ(net.slots()[0]->arrival, 1);
  EXPECT_EQ(net.slots()[0]->departure, 9);  // departure is not shifted
}

TEST(StochasticAssign, EarlyDepartureSwap) {
  // Hand trace: e1 needs 10 A*periods, e2 queued. After e1 is charged, the swap fires.
  Network net = build_auto_network({"S1"}, 10.0, Phasing::single, 208.0, AssignmentMode::stochastic, true);
  stochastic_assign(net, ev("e1", 0, 10, 10), 0);
  stochastic_assign(net, ev("e2", 0, 10, 10), 0);
  EXPECT_TRUE(net.swap_finished(0).empty());
  net.slots()[0]->charge(32.0);
  auto swaps = net.swap_finished(1);
  ASSERT_EQ(swaps.size(), 1u);
  EXPECT_EQ(swaps[0].session.session_id, "e1");
  EXPECT_EQ(net.swap_count(), 1u);
  EXPECT_EQ(net.slots()[0]->session_id, "e2");
}

TEST(StochasticAssign, LowestStationIdFirst) {
  Network net = build_auto_network({"S2", "S1"}, 10.0, Phasing::single, 208.0, AssignmentMode::stochastic);
  auto a = stochastic_assign(net, ev("e1", 0, 5, 10), 0);
  EXPECT_EQ(*a.station_id, "S1");
}

TEST(StochasticAssign, DeterministicNetworkRejects) {
  Network net = build_auto_network({"S1"}, 10.0, Phasing::single);
  EXPECT_THROW(stochastic_assign(net, ev("e1", 0, 5, 10), 0), Error);
}

TEST(DeterministicPlug, OccupiedEvseRejected) {
  Network net = build_auto_network({"S1"}, 10.0, Phasing::single);
  net.plug(make_session("a", "S1", 0, 5, 5, 10));
  try {
    net.plug(make_session("b", "S1", 0, 5, 5, 10));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::occupied_evse);
  }
}

TEST(NetworkJson, RoundTrip) {
  std::vector<EvseNode> evses{{"A", 0.0, 208.0, PilotModel::finite_set({8, 16, 24, 32})},
                              {"B", -120.0, 120.0, PilotModel::deadband(40)}};
  Infrastructure infra(evses, {{"line", {{"A", 1.0}, {"B", -0.5}}, 40.0, false}, {"agg", {{"A", 1.0}}, 80.0, true}});
  const auto j = infrastructure_to_json(infra);
  const Infrastructure back = infrastructure_from_json(j);
  EXPECT_EQ(infrastructure_to_json(back), j);
  EXPECT_EQ(back.evses()[0].pilot.allowed, (std::vector<double>{8, 16, 24, 32}));
  EXPECT_TRUE(back.constraints()[1].phase_agnostic);
}

TEST(NetworkJson, RejectsUnknownStationInConstraint) {
  nlohmann::json j = {{"evses", {{{"station_id", "A"}, {"phase_angle", 0}, {"voltage", 208},
                                  {"model", {{"kind", "continuous"}, {"max_rate", 32}}}}}},
                      {"constraints", {{{"id", "c"}, {"limit", 10}, {"coefficients", {{"Z", 1}}}}}}};
  EXPECT_THROW(infrastructure_from_json(j), Error);
}

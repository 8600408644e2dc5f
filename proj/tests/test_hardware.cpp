#include <acnsim/hardware.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace acnsim;

TEST(ClampPilot, FiniteSetFloors) {
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::finite_set({8, 16, 24, 32}), 23.0), 16.0);
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::finite_set({8, 16, 24, 32}), 7.9), 0.0);
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::finite_set({8, 16, 24, 32}), 99.0), 32.0);
}

TEST(ClampPilot, DeadbandForbidsLowPilots) {
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::deadband(32), 4.0), 0.0);
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::deadband(32), 6.0), 6.0);
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::deadband(32), 40.0), 32.0);
}

TEST(ClampPilot, ContinuousUpperClamp) {
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::continuous(32), 40.0), 32.0);
  EXPECT_DOUBLE_EQ(clamp_pilot(PilotModel::continuous(32), 12.5), 12.5);
}

TEST(ClampPilot, Idempotent) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  const PilotModel models[] = {PilotModel::continuous(32, 2), PilotModel::deadband(32),
                               PilotModel::finite_set({8, 16, 24, 32})};
  for (const auto& m : models) {
    for (int k = 0; k < 500; ++k) {
      const double x = u(rng);
      EXPECT_DOUBLE_EQ(clamp_pilot(m, clamp_pilot(m, x)), clamp_pilot(m, x));
    }
  }
}

TEST(PilotSteps, AboveAndBelow) {
  const auto db = PilotModel::deadband(32);
  EXPECT_DOUBLE_EQ(next_pilot_above(db, 0.0), 6.0);
  EXPECT_DOUBLE_EQ(next_pilot_above(db, 6.0), 7.0);
  EXPECT_DOUBLE_EQ(next_pilot_above(db, 32.0), 32.0);
  EXPECT_DOUBLE_EQ(next_pilot_below(db, 6.0), 0.0);
  const auto fs = PilotModel::finite_set({8, 16, 24, 32});
  EXPECT_DOUBLE_EQ(next_pilot_above(fs, 0.0), 8.0);
  EXPECT_DOUBLE_EQ(next_pilot_above(fs, 16.0), 24.0);
  EXPECT_DOUBLE_EQ(next_pilot_below(fs, 16.0), 8.0);
  EXPECT_DOUBLE_EQ(next_pilot_below(fs, 8.0), 0.0);
  const auto c = PilotModel::continuous(32);
  EXPECT_DOUBLE_EQ(next_pilot_above(c, 31.5), 32.0);
  EXPECT_DOUBLE_EQ(next_pilot_below(c, 10.0), 9.0);
}

TEST(PilotCovering, RoundsUpToEmittable) {
  EXPECT_DOUBLE_EQ(pilot_covering(PilotModel::finite_set({8, 16, 24, 32}), 9.0), 16.0);
  EXPECT_DOUBLE_EQ(pilot_covering(PilotModel::deadband(32), 2.0), 6.0);
  EXPECT_DOUBLE_EQ(pilot_covering(PilotModel::continuous(32), 50.0), 32.0);
  EXPECT_DOUBLE_EQ(pilot_covering(PilotModel::continuous(32), 0.0), 0.0);
}

TEST(PilotModel, Validation) {
  EXPECT_THROW(PilotModel::continuous(4, 6).validate(), Error);
  EXPECT_THROW(PilotModel::finite_set({}).validate(), Error);
  EXPECT_NO_THROW(PilotModel::finite_set({32, 8, 16}).validate());
}

TEST(BatteryStep, IdealHeadroomBinds) {
  Battery b = Battery::ideal(100.0, 90.0, 32.0);
  EXPECT_DOUBLE_EQ(battery_step(b, 32.0), 10.0);
  EXPECT_DOUBLE_EQ(b.charge, 100.0);
}

TEST(BatteryStep, TwoStageAbsorption) {
  Battery b = Battery::two_stage(1000.0, 900.0, 32.0, 0.8);
  EXPECT_NEAR(battery_step(b, 32.0), 16.0, 1e-12);
}

TEST(BatteryStep, TwoStageBulkPilotBinds) {
  Battery b = Battery::two_stage(1000.0, 500.0, 32.0, 0.8);
  EXPECT_DOUBLE_EQ(battery_step(b, 20.0), 20.0);
}

TEST(BatteryStep, NegativePilotRejected) {
  Battery b = Battery::ideal(100.0, 0.0, 32.0);
  try {
    battery_step(b, -1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::negative_pilot);
  }
}

TEST(BatteryStep, NeverExceedsPilotRateOrCapacity) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 40.0), frac(0.0, 1.0);
  for (int k = 0; k < 300; ++k) {
    Battery b = (k % 2) ? Battery::ideal(200.0, 200.0 * frac(rng), 32.0)
                        : Battery::two_stage(200.0, 200.0 * frac(rng), 32.0, 0.8);
    for (int t = 0; t < 20; ++t) {
      const double p = u(rng);
      const double r = battery_step(b, p);
      EXPECT_LE(r, p + 1e-12);
      EXPECT_LE(r, 32.0 + 1e-12);
      EXPECT_LE(b.charge, b.capacity);
      EXPECT_GE(r, 0.0);
    }
  }
}

TEST(BatteryStep, TwoStageTailIsGeometricAndDecreasing) {
  const double cap = 400.0, rbar = 32.0, th = 0.8;
  Battery b = Battery::two_stage(cap, 0.85 * cap, rbar, th);
  const double ratio = 1.0 - rbar / ((1.0 - th) * cap);
  double gap = cap - b.charge;
  double previous = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 60; ++t) {
    const double r = battery_step(b, 40.0);
    gap *= ratio;
    EXPECT_LT(r, previous);
    previous = r;
    EXPECT_NEAR(cap - b.charge, gap, 1e-9 * cap);
  }
}

TEST(Conversion, KwhToAmpPeriods) {
  EXPECT_NEAR(kwh_to_amp_periods(1.0, 208.0, 5.0), 57.6923, 1e-4);
  EXPECT_NEAR(kwh_to_amp_periods(10.0, 208.0, 5.0), 576.923, 1e-3);
  EXPECT_NEAR(kwh_to_amp_periods(1.0, 120.0, 60.0), 8.3333, 1e-4);
  EXPECT_THROW(kwh_to_amp_periods(0.0, 208.0, 5.0), Error);
  EXPECT_THROW(kwh_to_amp_periods(1.0, -1.0, 5.0), Error);
  EXPECT_NEAR(amp_periods_to_kwh(kwh_to_amp_periods(3.7, 208.0, 5.0), 208.0, 5.0), 3.7, 1e-12);
}

TEST(RemainingDemand, SpecExamples) {
  SessionEV a = make_session("a", "S", 0, 10, 10, 100.0, {BatteryKind::ideal, 32.0, 0.8, 240.0});
  a.delivered = 40.0;
  EXPECT_DOUBLE_EQ(remaining_demand(a), 60.0);

  SessionEV b = make_session("b", "S", 0, 10, 10, 100.0, {BatteryKind::ideal, 32.0, 0.8, 50.0});
  EXPECT_DOUBLE_EQ(remaining_demand(b), 50.0);

  SessionEV c = make_session("c", "S", 0, 10, 10, 100.0);
  c.delivered = 100.0;
  EXPECT_DOUBLE_EQ(remaining_demand(c), 0.0);
}

TEST(Session, InitialChargeLeavesRoomForRequest) {
  SessionEV ev = make_session("a", "S", 0, 10, 10, 100.0, {BatteryKind::ideal, 32.0, 0.8, 300.0});
  EXPECT_DOUBLE_EQ(ev.battery.charge, 200.0);
  EXPECT_DOUBLE_EQ(ev.deliverable(), 100.0);
  EXPECT_THROW(make_session("x", "S", 5, 5, 5, 1.0), Error);
}

TEST(Session, ConservationOverChargingRun) {
  SessionEV ev = make_session("a", "S", 0, 100, 100, 700.0, {BatteryKind::two_stage, 32.0, 0.8, 0.0});
  double sum = 0.0;
  for (int t = 0; t < 100; ++t) sum += ev.charge(32.0);
  EXPECT_NEAR(ev.delivered, sum, 1e-9 * sum);
  EXPECT_NEAR(ev.battery.charge - ev.battery.initial_charge, sum, 1e-9 * sum);
}

#pragma once

// EVSE pilot quantization and EV battery dynamics.
//
// Energy is tracked in A*periods: one period at r amps delivers r A*periods.

#include <acnsim/common.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace acnsim {

/// J1772 forbids pilots strictly between 0 and this value.
inline constexpr double kDeadbandFloor = 6.0;

struct PilotModel {
  enum class Kind { continuous, deadband, finite_set };

  Kind kind = Kind::continuous;
  double max_rate = 32.0;
  double min_rate = 0.0;
  std::vector<double> allowed;  // finite_set only, ascending

  static PilotModel continuous(double max_rate, double min_rate = 0.0) {
    return {Kind::continuous, max_rate, min_rate, {}};
  }

  static PilotModel deadband(double max_rate) {
    return {Kind::deadband, max_rate, kDeadbandFloor, {}};
  }

  static PilotModel finite_set(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    PilotModel model{Kind::finite_set, values.empty() ? 0.0 : values.back(), 0.0, std::move(values)};
    return model;
  }

  void validate() const {
    if (!(max_rate >= min_rate && min_rate >= 0.0)) {
      throw Error(Errc::invalid_argument, "pilot model requires max-rate >= min-rate >= 0");
    }
    if (kind == Kind::finite_set) {
      if (allowed.empty()) throw Error(Errc::invalid_argument, "finite-set pilot model has no values");
      if (!std::is_sorted(allowed.begin(), allowed.end()) || allowed.front() < 0.0) {
        throw Error(Errc::invalid_argument, "finite-set values must be ascending and non-negative");
      }
    }
  }
};

inline std::string to_string(PilotModel::Kind kind) {
  switch (kind) {
    case PilotModel::Kind::continuous: return "continuous";
    case PilotModel::Kind::deadband: return "deadband";
    case PilotModel::Kind::finite_set: return "finite_set";
  }
  return "continuous";
}

/// Snap a requested pilot onto what the hardware can actually emit. Finite sets floor.
inline double clamp_pilot(const PilotModel& model, double requested) {
  requested = std::max(requested, 0.0);
  switch (model.kind) {
    case PilotModel::Kind::continuous:
      if (requested < model.min_rate) return 0.0;
      return std::min(requested, model.max_rate);
    case PilotModel::Kind::deadband:
      if (requested < kDeadbandFloor) return 0.0;
      return std::min(requested, model.max_rate);
    case PilotModel::Kind::finite_set: {
      auto it = std::upper_bound(model.allowed.begin(), model.allowed.end(), requested);
      if (it == model.allowed.begin()) return 0.0;
      return *std::prev(it);
    }
  }
  return 0.0;
}

/// Smallest emittable pilot strictly above `current`, or `current` when none exists.
/// Continuous models step by one amp.
inline double next_pilot_above(const PilotModel& model, double current) {
  switch (model.kind) {
    case PilotModel::Kind::continuous: {
      double next = std::max(current + 1.0, model.min_rate);
      return std::min(next, model.max_rate) > current ? std::min(next, model.max_rate) : current;
    }
    case PilotModel::Kind::deadband: {
      double next = current < kDeadbandFloor ? kDeadbandFloor : current + 1.0;
      next = std::min(next, model.max_rate);
      return next > current && next >= kDeadbandFloor ? next : current;
    }
    case PilotModel::Kind::finite_set: {
      auto it = std::upper_bound(model.allowed.begin(), model.allowed.end(), current);
      return it == model.allowed.end() ? current : *it;
    }
  }
  return current;
}

/// Largest emittable pilot strictly below `current` (0 when nothing smaller is allowed).
inline double next_pilot_below(const PilotModel& model, double current) {
  if (current <= 0.0) return 0.0;
  switch (model.kind) {
    case PilotModel::Kind::continuous: {
      double lower = std::ceil(current) - 1.0;
      return lower < std::max(model.min_rate, 0.0) || lower <= 0.0 ? 0.0 : lower;
    }
    case PilotModel::Kind::deadband: {
      double lower = std::ceil(current) - 1.0;
      return lower < kDeadbandFloor ? 0.0 : lower;
    }
    case PilotModel::Kind::finite_set: {
      auto it = std::lower_bound(model.allowed.begin(), model.allowed.end(), current);
      if (it == model.allowed.begin()) return 0.0;
      return std::max(*std::prev(it), 0.0);
    }
  }
  return 0.0;
}

/// Smallest emittable pilot that is at least `need`, limited to the model's maximum.
/// Quantized hardware may have to overshoot a small demand; the battery limits the draw.
inline double pilot_covering(const PilotModel& model, double need) {
  if (need <= 0.0) return 0.0;
  switch (model.kind) {
    case PilotModel::Kind::continuous:
      return std::min(need, model.max_rate);
    case PilotModel::Kind::deadband:
      return std::min(std::max(need, kDeadbandFloor), model.max_rate);
    case PilotModel::Kind::finite_set: {
      auto it = std::lower_bound(model.allowed.begin(), model.allowed.end(), need);
      return it == model.allowed.end() ? model.allowed.back() : *it;
    }
  }
  return 0.0;
}

enum class BatteryKind { ideal, two_stage };

struct Battery {
  BatteryKind kind = BatteryKind::ideal;
  double capacity = 0.0;        // A*periods
  double charge = 0.0;          // A*periods
  double max_rate = 32.0;       // on-board charger limit, amps
  double threshold = 0.8;       // bulk/absorption transition (two_stage only)
  double initial_charge = 0.0;  // charge at plug-in

  static Battery ideal(double capacity, double initial_charge, double max_rate) {
    Battery b{BatteryKind::ideal, capacity, initial_charge, max_rate, 0.8, initial_charge};
    b.validate();
    return b;
  }

  static Battery two_stage(double capacity, double initial_charge, double max_rate,
                           double threshold = 0.8) {
    Battery b{BatteryKind::two_stage, capacity, initial_charge, max_rate, threshold, initial_charge};
    b.validate();
    return b;
  }

  double state_of_charge() const { return capacity > 0.0 ? charge / capacity : 1.0; }
  double headroom() const { return std::max(capacity - charge, 0.0); }

  void validate() const {
    if (!(max_rate > 0.0)) throw Error(Errc::invalid_argument, "battery max-rate must be positive");
    if (!(capacity >= 0.0) || charge < 0.0 || charge > capacity) {
      throw Error(Errc::invalid_argument, "battery charge must lie in [0, capacity]");
    }
    if (kind == BatteryKind::two_stage && !(threshold > 0.0 && threshold < 1.0)) {
      throw Error(Errc::invalid_argument, "two-stage threshold must lie in (0, 1)");
    }
  }
};

/// Advance the battery by one period under `pilot`; returns the actual current drawn.
inline double battery_step(Battery& battery, double pilot) {
  if (pilot < 0.0) throw Error(Errc::negative_pilot, "pilot " + std::to_string(pilot));
  const double headroom = battery.headroom();
  double rate = 0.0;
  if (battery.kind == BatteryKind::two_stage && battery.state_of_charge() > battery.threshold) {
    const double absorption =
        (1.0 - battery.state_of_charge()) * battery.max_rate / (1.0 - battery.threshold);
    rate = std::min({absorption, pilot, headroom});
  } else {
    rate = std::min({pilot, battery.max_rate, headroom});
  }
  rate = std::max(rate, 0.0);
  if (rate == headroom) {
    battery.charge = battery.capacity;
  } else {
    battery.charge = std::min(battery.charge + rate, battery.capacity);
  }
  return rate;
}

inline double kwh_to_amp_periods(double kwh, double voltage, double period_minutes) {
  if (!(kwh > 0.0) || !(voltage > 0.0) || !(period_minutes > 0.0)) {
    throw Error(Errc::nonpositive_argument, "energy, voltage and period length must be positive");
  }
  return kwh * 1000.0 * 60.0 / (voltage * period_minutes);
}

inline double amp_periods_to_kwh(double amp_periods, double voltage, double period_minutes) {
  return amp_periods * voltage * period_minutes / (60.0 * 1000.0);
}

struct SessionEV {
  std::string session_id;
  std::string station_id;  // empty when the network assigns spaces
  Period arrival = 0;
  Period departure = 0;            // actual
  Period estimated_departure = 0;  // what algorithms see
  double requested = 0.0;          // A*periods
  double delivered = 0.0;          // A*periods
  Battery battery;
  bool estimate_is_truth = false;  // estimate defaulted to the actual departure

  /// Requested energy limited by what the battery can absorb from its plug-in state.
  double deliverable() const {
    return std::min(requested, std::max(battery.capacity - battery.initial_charge, 0.0));
  }

  double charge(double pilot) {
    const double rate = battery_step(battery, pilot);
    delivered += rate;
    return rate;
  }
};

inline double remaining_demand(const SessionEV& ev) {
  return std::max(0.0, ev.deliverable() - ev.delivered);
}

/// Battery parameters applied to new sessions.
struct BatteryProfile {
  BatteryKind kind = BatteryKind::ideal;
  double max_rate = 32.0;
  double threshold = 0.8;
  double capacity = 0.0;  // A*periods; 0 sizes the pack to the request
};

/// A session whose battery starts at capacity - min(requested, capacity).
inline SessionEV make_session(std::string session_id, std::string station_id, Period arrival,
                              Period departure, Period estimated_departure, double requested,
                              const BatteryProfile& profile = {}) {
  if (departure <= arrival) {
    throw Error(Errc::invalid_argument, "session " + session_id + " departs before it arrives");
  }
  if (requested < 0.0) throw Error(Errc::invalid_argument, "negative energy request");
  const double capacity = profile.capacity > 0.0 ? profile.capacity : requested;
  const double initial = capacity - std::min(requested, capacity);
  SessionEV ev;
  ev.session_id = std::move(session_id);
  ev.station_id = std::move(station_id);
  ev.arrival = arrival;
  ev.departure = departure;
  ev.estimated_departure = estimated_departure;
  ev.requested = requested;
  ev.battery = profile.kind == BatteryKind::ideal
                   ? Battery::ideal(capacity, initial, profile.max_rate)
                   : Battery::two_stage(capacity, initial, profile.max_rate, profile.threshold);
  return ev;
}

}  // namespace acnsim

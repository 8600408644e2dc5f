#pragma once

// Charging infrastructure: EVSEs, current-magnitude constraints and space assignment.
//
// Each constraint j limits |sum_i A_ij * r_i * exp(i*phi_i)| <= R_j, where r_i is the
// current of EVSE i and phi_i its fixed phase angle.

#include <acnsim/common.hpp>
#include <acnsim/hardware.hpp>

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <deque>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace acnsim {

using RateMap = std::map<std::string, double, std::less<>>;

struct EvseNode {
  std::string station_id;
  double phase_angle = 0.0;  // degrees
  double voltage = 208.0;    // nominal volts
  PilotModel pilot;

  double max_rate() const { return pilot.max_rate; }
  double min_rate() const { return pilot.min_rate; }
};

struct PhasorConstraint {
  std::string id;
  std::map<std::string, double, std::less<>> coefficients;  // station-id -> A_ij
  double limit = 0.0;                                       // amps
  // Sum the currents arithmetically, ignoring phase. Used for aggregate power caps.
  bool phase_agnostic = false;
};

/// Immutable EVSE registry plus constraint set, with the phasors precomputed.
class Infrastructure {
 public:
  struct Term {
    std::size_t evse;
    std::complex<double> phasor;  // A_ij * exp(i*phi_i)
  };

  Infrastructure() = default;

  Infrastructure(std::vector<EvseNode> evses, std::vector<PhasorConstraint> constraints)
      : evses_(std::move(evses)), constraints_(std::move(constraints)) {
    for (std::size_t i = 0; i < evses_.size(); ++i) {
      evses_[i].pilot.validate();
      if (!index_.emplace(evses_[i].station_id, i).second) {
        throw Error(Errc::invalid_argument, "duplicate station id " + evses_[i].station_id);
      }
    }
    terms_.reserve(constraints_.size());
    for (const auto& c : constraints_) {
      if (!(c.limit >= 0.0)) throw Error(Errc::invalid_argument, "constraint " + c.id + " has negative limit");
      std::vector<Term> row;
      for (const auto& [station, coef] : c.coefficients) {
        const std::size_t i = require_index(station);
        const double angle = c.phase_agnostic ? 0.0 : evses_[i].phase_angle * std::numbers::pi / 180.0;
        row.push_back({i, std::polar(coef, angle)});
      }
      terms_.push_back(std::move(row));
    }
  }

  const std::vector<EvseNode>& evses() const { return evses_; }
  const std::vector<PhasorConstraint>& constraints() const { return constraints_; }
  const std::vector<Term>& terms(std::size_t constraint) const { return terms_[constraint]; }
  std::size_t size() const { return evses_.size(); }

  std::optional<std::size_t> index_of(std::string_view station_id) const {
    auto it = index_.find(station_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require_index(std::string_view station_id) const {
    auto idx = index_of(station_id);
    if (!idx) throw Error(Errc::unknown_evse, std::string(station_id));
    return *idx;
  }

  std::vector<double> dense(const RateMap& rates) const {
    std::vector<double> out(evses_.size(), 0.0);
    for (const auto& [station, rate] : rates) {
      const std::size_t i = require_index(station);
      if (rate < 0.0) throw Error(Errc::negative_rate, station + " -> " + std::to_string(rate));
      out[i] = rate;
    }
    return out;
  }

  double current(std::size_t constraint, std::span<const double> rates) const {
    std::complex<double> sum{0.0, 0.0};
    for (const auto& term : terms_[constraint]) sum += term.phasor * rates[term.evse];
    return std::abs(sum);
  }

  std::vector<double> currents(std::span<const double> rates) const {
    std::vector<double> out(constraints_.size());
    for (std::size_t j = 0; j < constraints_.size(); ++j) out[j] = current(j, rates);
    return out;
  }

  /// Magnitude constraints plus the per-EVSE envelope [0, max-rate].
  bool feasible(std::span<const double> rates, double tolerance = kFeasibilityTolerance) const {
    for (std::size_t i = 0; i < evses_.size(); ++i) {
      if (rates[i] < 0.0 || rates[i] > evses_[i].max_rate() + tolerance) return false;
    }
    for (std::size_t j = 0; j < constraints_.size(); ++j) {
      if (current(j, rates) > constraints_[j].limit + tolerance) return false;
    }
    return true;
  }

  /// Same EVSEs, a subset of the constraints.
  template <typename Pred>
  Infrastructure with_constraints(Pred keep) const {
    std::vector<PhasorConstraint> kept;
    for (const auto& c : constraints_) {
      if (keep(c)) kept.push_back(c);
    }
    return Infrastructure(evses_, std::move(kept));
  }

 private:
  std::vector<EvseNode> evses_;
  std::vector<PhasorConstraint> constraints_;
  std::vector<std::vector<Term>> terms_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

inline std::map<std::string, double> constraint_currents(const Infrastructure& infra,
                                                         const RateMap& rates) {
  const auto dense = infra.dense(rates);
  std::map<std::string, double> out;
  for (std::size_t j = 0; j < infra.constraints().size(); ++j) {
    out[infra.constraints()[j].id] = infra.current(j, dense);
  }
  return out;
}

inline bool is_feasible(const Infrastructure& infra, const RateMap& rates,
                        double tolerance = kFeasibilityTolerance) {
  if (tolerance < 0.0) throw Error(Errc::invalid_argument, "negative tolerance");
  return infra.feasible(infra.dense(rates), tolerance);
}

/// Largest r in [0, upper] keeping `rates` with rates[evse] = r feasible. The feasible
/// set along one coordinate is an interval containing 0, so bisection applies. The
/// returned value is always on the feasible side of the bracket.
inline double max_feasible_rate(const Infrastructure& infra, std::size_t evse,
                                std::vector<double> rates, double upper, double tol = 0.01) {
  rates[evse] = 0.0;
  if (!infra.feasible(rates)) {
    throw Error(Errc::infeasible_fixed_rates, "fixed rates violate the network constraints");
  }
  upper = std::min(std::max(upper, 0.0), infra.evses()[evse].max_rate());
  rates[evse] = upper;
  if (infra.feasible(rates)) return upper;
  double lo = 0.0;
  double hi = upper;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    rates[evse] = mid;
    (infra.feasible(rates) ? lo : hi) = mid;
  }
  return lo;
}

inline double max_feasible_rate(const Infrastructure& infra, std::string_view station_id,
                                const RateMap& fixed, double upper, double tol = 0.01) {
  if (upper < 0.0) throw Error(Errc::invalid_argument, "negative upper bound");
  const std::size_t idx = infra.require_index(station_id);
  return max_feasible_rate(infra, idx, infra.dense(fixed), upper, tol);
}

enum class Phasing { single, three };
enum class AssignmentMode { deterministic, stochastic };

/// Phase angles used by three-phase auto networks, assigned round-robin.
inline constexpr double kPhaseAngles[3] = {0.0, -120.0, 120.0};

/// Transformer-limited site. Single phase: one constraint with limit cap/V. Three phase:
/// EVSEs take phases 0, -120, 120 round-robin at the line-to-neutral voltage, one line
/// constraint per phase at cap/(3*V_LN) plus an aggregate power cap.
inline Infrastructure build_auto_infrastructure(const std::vector<std::string>& station_ids,
                                                double transformer_kw, Phasing phasing,
                                                double voltage = 208.0,
                                                const PilotModel& pilot = PilotModel::continuous(32.0)) {
  if (!(transformer_kw > 0.0)) throw Error(Errc::nonpositive_argument, "transformer capacity must be positive");
  if (!(voltage > 0.0)) throw Error(Errc::nonpositive_argument, "voltage must be positive");
  if (station_ids.empty()) throw Error(Errc::invalid_argument, "auto network needs at least one station");

  std::vector<EvseNode> evses;
  std::vector<PhasorConstraint> constraints;
  if (phasing == Phasing::single) {
    PhasorConstraint transformer{"transformer", {}, transformer_kw * 1000.0 / voltage, false};
    for (const auto& id : station_ids) {
      evses.push_back({id, 0.0, voltage, pilot});
      transformer.coefficients[id] = 1.0;
    }
    constraints.push_back(std::move(transformer));
  } else {
    const double line_to_neutral = voltage / std::numbers::sqrt3;
    const double line_limit = transformer_kw * 1000.0 / (3.0 * line_to_neutral);
    const char* names[3] = {"phase-a", "phase-b", "phase-c"};
    for (int p = 0; p < 3; ++p) constraints.push_back({names[p], {}, line_limit, false});
    PhasorConstraint aggregate{"aggregate", {}, transformer_kw * 1000.0 / line_to_neutral, true};
    for (std::size_t i = 0; i < station_ids.size(); ++i) {
      const std::size_t p = i % 3;
      evses.push_back({station_ids[i], kPhaseAngles[p], line_to_neutral, pilot});
      constraints[p].coefficients[station_ids[i]] = 1.0;
      aggregate.coefficients[station_ids[i]] = 1.0;
    }
    constraints.push_back(std::move(aggregate));
  }
  return Infrastructure(std::move(evses), std::move(constraints));
}

/// Outcome of placing an arriving EV.
struct Assignment {
  std::optional<std::string> station_id;  // empty when the EV joined the waiting queue
  bool queued() const { return !station_id.has_value(); }
};

/// An EV leaving its space (or the waiting queue), and who took the space over.
struct Departure {
  SessionEV session;
  bool from_queue = false;
  std::optional<std::string> successor_session;
  std::optional<std::string> station_id;
};

/// Infrastructure plus the mutable occupancy state of a run.
class Network {
 public:
  Network() = default;

  explicit Network(Infrastructure infra, AssignmentMode mode = AssignmentMode::deterministic,
                   bool early_departure = false)
      : infra_(std::move(infra)), mode_(mode), early_departure_(early_departure),
        slots_(infra_.size()) {
    open_order_.resize(infra_.size());
    for (std::size_t i = 0; i < open_order_.size(); ++i) open_order_[i] = i;
    std::sort(open_order_.begin(), open_order_.end(), [&](std::size_t a, std::size_t b) {
      return infra_.evses()[a].station_id < infra_.evses()[b].station_id;
    });
  }

  const Infrastructure& infrastructure() const { return infra_; }
  AssignmentMode mode() const { return mode_; }
  bool early_departure() const { return early_departure_; }
  std::size_t swap_count() const { return swaps_; }
  const std::deque<SessionEV>& waiting_queue() const { return queue_; }

  const std::vector<std::optional<SessionEV>>& slots() const { return slots_; }
  std::vector<std::optional<SessionEV>>& slots() { return slots_; }

  bool empty() const {
    return queue_.empty() &&
           std::none_of(slots_.begin(), slots_.end(), [](const auto& s) { return s.has_value(); });
  }

  /// Deterministic placement at the EV's own station-id.
  void plug(SessionEV ev) {
    const std::size_t i = infra_.require_index(ev.station_id);
    if (slots_[i]) {
      throw Error(Errc::occupied_evse, ev.station_id + " already hosts " + slots_[i]->session_id);
    }
    slots_[i] = std::move(ev);
  }

  /// Lowest open EVSE (station-id order), otherwise the back of the waiting queue.
  Assignment assign(SessionEV ev) {
    for (std::size_t i : open_order_) {
      if (!slots_[i]) {
        ev.station_id = infra_.evses()[i].station_id;
        slots_[i] = std::move(ev);
        return {slots_[i]->station_id};
      }
    }
    ev.station_id.clear();
    queue_.push_back(std::move(ev));
    return {};
  }

  /// Remove a session from its EVSE or from the queue. A freed EVSE goes to the queue head.
  std::optional<Departure> unplug(std::string_view session_id, Period now) {
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (slots_[i] && slots_[i]->session_id == session_id) return vacate(i, now);
    }
    auto it = std::find_if(queue_.begin(), queue_.end(),
                           [&](const SessionEV& ev) { return ev.session_id == session_id; });
    if (it == queue_.end()) return std::nullopt;
    Departure d{std::move(*it), true, std::nullopt, std::nullopt};
    queue_.erase(it);
    return d;
  }

  /// Early-departure swaps: finished EVs give their space to the queue head.
  std::vector<Departure> swap_finished(Period now) {
    std::vector<Departure> out;
    if (!early_departure_) return out;
    for (std::size_t i : open_order_) {
      if (queue_.empty()) break;
      if (slots_[i] && remaining_demand(*slots_[i]) <= kDemandEpsilon) out.push_back(vacate(i, now));
    }
    return out;
  }

 private:
  Departure vacate(std::size_t i, Period now) {
    Departure d{std::move(*slots_[i]), false, std::nullopt, infra_.evses()[i].station_id};
    slots_[i].reset();
    if (mode_ == AssignmentMode::stochastic && !queue_.empty()) {
      SessionEV next = std::move(queue_.front());
      queue_.pop_front();
      next.arrival = now;
      next.station_id = infra_.evses()[i].station_id;
      d.successor_session = next.session_id;
      slots_[i] = std::move(next);
      ++swaps_;
    }
    return d;
  }

  Infrastructure infra_;
  AssignmentMode mode_ = AssignmentMode::deterministic;
  bool early_departure_ = false;
  std::vector<std::optional<SessionEV>> slots_;
  std::vector<std::size_t> open_order_;
  std::deque<SessionEV> queue_;
  std::size_t swaps_ = 0;
};

inline Network build_auto_network(const std::vector<std::string>& station_ids, double transformer_kw,
                                  Phasing phasing, double voltage = 208.0,
                                  AssignmentMode mode = AssignmentMode::deterministic,
                                  bool early_departure = false,
                                  const PilotModel& pilot = PilotModel::continuous(32.0)) {
  return Network(build_auto_infrastructure(station_ids, transformer_kw, phasing, voltage, pilot), mode,
                 early_departure);
}

/// Place an arriving EV on a stochastic network.
inline Assignment stochastic_assign(Network& network, SessionEV ev, Period now) {
  if (network.mode() != AssignmentMode::stochastic) {
    throw Error(Errc::invalid_argument, "stochastic_assign on a deterministic network");
  }
  ev.arrival = now;
  return network.assign(std::move(ev));
}

// ---------------------------------------------------------------------------
// JSON schema (see docs/schemas.md)

inline PilotModel pilot_from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", std::string("continuous"));
  const double max_rate = j.value("max_rate", 32.0);
  if (kind == "continuous") return PilotModel::continuous(max_rate, j.value("min_rate", 0.0));
  if (kind == "deadband") return PilotModel::deadband(max_rate);
  if (kind == "finite_set") return PilotModel::finite_set(j.at("values").get<std::vector<double>>());
  throw Error(Errc::parse_error, "unknown pilot model kind '" + kind + "'");
}

inline nlohmann::json pilot_to_json(const PilotModel& m) {
  nlohmann::json j{{"kind", to_string(m.kind)}, {"max_rate", m.max_rate}};
  if (m.kind == PilotModel::Kind::continuous) j["min_rate"] = m.min_rate;
  if (m.kind == PilotModel::Kind::finite_set) j["values"] = m.allowed;
  return j;
}

inline Infrastructure infrastructure_from_json(const nlohmann::json& j) {
  try {
    std::vector<EvseNode> evses;
    for (const auto& e : j.at("evses")) {
      evses.push_back({e.at("station_id").get<std::string>(), e.value("phase_angle", 0.0),
                       e.value("voltage", 208.0), pilot_from_json(e.value("model", nlohmann::json::object()))});
    }
    std::vector<PhasorConstraint> constraints;
    for (const auto& c : j.value("constraints", nlohmann::json::array())) {
      PhasorConstraint pc;
      pc.id = c.at("id").get<std::string>();
      pc.limit = c.at("limit").get<double>();
      pc.phase_agnostic = c.value("phase_agnostic", false);
      for (const auto& [station, coef] : c.at("coefficients").items()) pc.coefficients[station] = coef.get<double>();
      constraints.push_back(std::move(pc));
    }
    return Infrastructure(std::move(evses), std::move(constraints));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("network description: ") + e.what());
  }
}

inline nlohmann::json infrastructure_to_json(const Infrastructure& infra) {
  nlohmann::json evses = nlohmann::json::array();
  for (const auto& e : infra.evses()) {
    evses.push_back({{"station_id", e.station_id},
                     {"phase_angle", e.phase_angle},
                     {"voltage", e.voltage},
                     {"model", pilot_to_json(e.pilot)}});
  }
  nlohmann::json constraints = nlohmann::json::array();
  for (const auto& c : infra.constraints()) {
    nlohmann::json coefs = nlohmann::json::object();
    for (const auto& [k, v] : c.coefficients) coefs[k] = v;
    constraints.push_back({{"id", c.id}, {"limit", c.limit}, {"phase_agnostic", c.phase_agnostic},
                           {"coefficients", coefs}});
  }
  return {{"evses", evses}, {"constraints", constraints}};
}

}  // namespace acnsim

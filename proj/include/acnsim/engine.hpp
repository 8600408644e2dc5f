#pragma once

// Discrete-time event loop: pop due events, re-schedule after any event, push pilots
// through the EVSEs into the batteries, record everything, advance one period.

#include <acnsim/common.hpp>
#include <acnsim/events.hpp>
#include <acnsim/hardware.hpp>
#include <acnsim/network.hpp>
#include <acnsim/signals.hpp>

#include "json.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace acnsim {

struct SimConfig {
  double period_minutes = 5.0;
  DateTime start{};
  std::optional<Period> horizon;           // else run until the queue is exhausted
  double voltage = 208.0;                  // default for energy conversions
  std::optional<Period> recompute_period;  // fixed re-solve cadence, in periods
  int local_offset_minutes = 0;            // UTC offset of the local wall clock

  void validate() const {
    if (!(period_minutes > 0.0)) throw Error(Errc::nonpositive_argument, "period length must be positive");
    if (recompute_period && *recompute_period <= 0) {
      throw Error(Errc::nonpositive_argument, "recompute period must be positive");
    }
    if (horizon && *horizon < 0) throw Error(Errc::invalid_argument, "negative horizon");
  }
};

/// What an algorithm may know about a plugged-in session. Actual departure is absent.
struct ActiveSession {
  std::string session_id;
  std::string station_id;
  std::size_t evse = 0;
  Period arrival = 0;
  Period estimated_departure = 0;
  double requested = 0.0;  // A*periods
  double remaining = 0.0;  // A*periods
  double battery_max_rate = 0.0;
};

struct SimSignals {
  std::optional<Tariff> tariff;
  std::optional<TimeSeriesSignal> external_load;
  std::optional<TimeSeriesSignal> solar;
};

/// Read-only algorithm interface to the simulation state.
struct AlgoView {
  Period now = 0;
  double period_minutes = 5.0;
  DateTime start{};
  std::vector<ActiveSession> sessions;
  const Infrastructure* infrastructure = nullptr;
  const SimSignals* signals = nullptr;
  double peak_so_far_kw = 0.0;  // current billing month

  const Infrastructure& infra() const { return *infrastructure; }
  const EvseNode& evse(const ActiveSession& s) const { return infrastructure->evses()[s.evse]; }
  const PilotModel& pilot(const ActiveSession& s) const { return evse(s).pilot; }

  /// True service-rate bound: min of on-board charger and EVSE maximum.
  double effective_max(const ActiveSession& s) const {
    return std::min(s.battery_max_rate, evse(s).max_rate());
  }

  /// Highest pilot worth requesting this period: enough to cover min(charger, remaining),
  /// rounded up to an emittable value when the EVSE is quantized.
  double upper_bound(const ActiveSession& s) const {
    return pilot_covering(pilot(s), std::min(s.battery_max_rate, s.remaining));
  }

  DateTime time_of(Period t) const { return period_start(start, period_minutes, t); }

  const Tariff* tariff() const { return signals && signals->tariff ? &*signals->tariff : nullptr; }

  double price(Period t) const {
    const Tariff* tf = tariff();
    return tf ? price_at(*tf, time_of(t)) : 0.0;
  }

  double external_load_kw(Period t) const { return sample(signals ? &signals->external_load : nullptr, t); }
  double solar_kw(Period t) const { return sample(signals ? &signals->solar : nullptr, t); }

 private:
  double sample(const std::optional<TimeSeriesSignal>* sig, Period t) const {
    if (!sig || !*sig) return 0.0;
    const auto& s = **sig;
    const auto offset = std::chrono::duration<double>(time_of(t) - s.start).count() / (s.period_minutes * 60.0);
    return signal_at(s, static_cast<Period>(std::llround(offset)), period_minutes);
  }
};

/// Per-station pilot sequence. Entry k applies k periods after the schedule was computed.
using Schedule = std::map<std::string, std::vector<double>, std::less<>>;

class Algorithm {
 public:
  virtual ~Algorithm() = default;
  virtual std::string name() const = 0;
  virtual Schedule schedule(const AlgoView& view) = 0;
  /// Free-form counters reported in the run summary.
  virtual nlohmann::json diagnostics() const { return nlohmann::json::object(); }
};

struct SessionRecord {
  std::string session_id;
  std::string station_id;  // last EVSE used; empty if never plugged in
  Period arrival = 0;      // original arrival
  Period plugged_at = -1;  // -1 if the EV never got an EVSE
  Period left_at = 0;
  Period departure = 0;
  Period estimated_departure = 0;
  double requested = 0.0;
  double deliverable = 0.0;
  double delivered = 0.0;
  bool estimate_is_truth = false;
  bool left_early = false;
};

struct EventRecord {
  Period timestamp = 0;
  std::string kind;
  std::string session_id;
  std::string detail;
};

struct SimRecord {
  SimConfig config;
  std::string algorithm;
  std::vector<EvseNode> evses;
  std::vector<PhasorConstraint> constraints;
  std::vector<std::vector<double>> pilots;    // [period][evse]
  std::vector<std::vector<double>> actuals;   // [period][evse]
  std::vector<std::vector<double>> currents;  // [period][constraint], from actual currents
  std::vector<double> aggregate_kw;
  std::vector<EventRecord> events;
  std::vector<SessionRecord> sessions;
  std::size_t swaps = 0;
  std::vector<std::string> warnings;
  nlohmann::json diagnostics = nlohmann::json::object();

  std::size_t periods() const { return aggregate_kw.size(); }

  LoadProfile load_profile() const { return {config.start, config.period_minutes, aggregate_kw}; }
};

enum class StepStatus { continued, finished };

class Simulator {
 public:
  Simulator(SimConfig config, Network network, EventQueue events, std::shared_ptr<Algorithm> algorithm,
            SimSignals signals = {})
      : config_(config), network_(std::move(network)), queue_(std::move(events)),
        algorithm_(std::move(algorithm)), signals_(std::move(signals)) {
    config_.validate();
    if (!algorithm_) throw Error(Errc::invalid_argument, "simulator needs an algorithm");
    record_.config = config_;
    record_.algorithm = algorithm_->name();
    record_.evses = network_.infrastructure().evses();
    record_.constraints = network_.infrastructure().constraints();
    if (config_.recompute_period) queue_.enqueue(make_recompute(0));
  }

  /// Constraints the algorithm is shown, when they differ from the physical network.
  /// Must describe the same EVSEs in the same order.
  void set_algorithm_infrastructure(Infrastructure infra) {
    if (infra.size() != network_.infrastructure().size()) {
      throw Error(Errc::invalid_argument, "algorithm infrastructure must list the same EVSEs");
    }
    for (std::size_t i = 0; i < infra.size(); ++i) {
      if (infra.evses()[i].station_id != network_.infrastructure().evses()[i].station_id) {
        throw Error(Errc::invalid_argument, "algorithm infrastructure must list the same EVSEs in order");
      }
    }
    algorithm_infra_ = std::move(infra);
  }

  Period now() const { return now_; }
  bool finished() const { return finished_; }
  const Network& network() const { return network_; }
  const SimRecord& record() const { return record_; }

  StepStatus step() {
    if (finished_) throw Error(Errc::invalid_argument, "simulation already finished");
    if ((config_.horizon && now_ >= *config_.horizon) || (queue_.only_recompute_pending() && network_.empty())) {
      finish();
      return StepStatus::finished;
    }

    bool reschedule = false;
    for (auto& event : queue_.pop_due(now_)) {
      reschedule = true;
      apply(event);
    }
    for (auto& d : network_.swap_finished(now_)) {
      reschedule = true;
      log(now_, "unplug", d.session.session_id, "early departure" + successor_note(d));
      close_session(d, true);
    }
    // The run ends with its last event; nothing is left to charge.
    if (queue_.only_recompute_pending() && network_.empty()) {
      finish();
      return StepStatus::finished;
    }
    if (reschedule) recompute_schedule();
    charge_one_period();
    ++now_;
    return StepStatus::continued;
  }

  const SimRecord& run() {
    while (step() == StepStatus::continued) {
    }
    return record_;
  }

 private:
  static std::string successor_note(const Departure& d) {
    return d.successor_session ? "; " + *d.successor_session + " takes " + d.station_id.value_or("") : "";
  }

  void log(Period t, std::string kind, std::string session, std::string detail = {}) {
    record_.events.push_back({t, std::move(kind), std::move(session), std::move(detail)});
  }

  void apply(Event& event) {
    if (auto* p = std::get_if<PluginEvent>(&event.payload)) {
      SessionEV ev = std::move(p->session);
      original_arrival_[ev.session_id] = ev.arrival;
      const std::string id = ev.session_id;
      if (network_.mode() == AssignmentMode::deterministic) {
        network_.plug(std::move(ev));
        log(now_, "plugin", id);
      } else {
        const auto a = stochastic_assign(network_, std::move(ev), now_);
        log(now_, "plugin", id, a.queued() ? "queued" : "assigned " + *a.station_id);
      }
      note_plugged();
    } else if (auto* u = std::get_if<UnplugEvent>(&event.payload)) {
      auto d = network_.unplug(u->session_id, now_);
      if (!d) {
        log(now_, "unplug", u->session_id, "not present");
        return;
      }
      log(now_, "unplug", u->session_id, (d->from_queue ? "left waiting queue" : "") + successor_note(*d));
      close_session(*d, false);
    } else {
      log(now_, "recompute", "");
      if (config_.recompute_period && !(queue_.only_recompute_pending() && network_.empty())) {
        queue_.enqueue(make_recompute(now_ + *config_.recompute_period));
      }
    }
  }

  // Stamp first plug-in times, including queue heads promoted during unplugs.
  void note_plugged() {
    for (const auto& slot : network_.slots()) {
      if (slot && !plugged_at_.count(slot->session_id)) plugged_at_[slot->session_id] = now_;
    }
  }

  void close_session(const Departure& d, bool early) {
    note_plugged();
    const SessionEV& ev = d.session;
    SessionRecord r;
    r.session_id = ev.session_id;
    r.station_id = d.from_queue ? std::string() : ev.station_id;
    auto arr = original_arrival_.find(ev.session_id);
    r.arrival = arr != original_arrival_.end() ? arr->second : ev.arrival;
    auto pl = plugged_at_.find(ev.session_id);
    r.plugged_at = pl != plugged_at_.end() ? pl->second : -1;
    r.left_at = now_;
    r.departure = ev.departure;
    r.estimated_departure = ev.estimated_departure;
    r.requested = ev.requested;
    r.deliverable = ev.deliverable();
    r.delivered = ev.delivered;
    r.estimate_is_truth = ev.estimate_is_truth;
    r.left_early = early;
    record_.sessions.push_back(std::move(r));
  }

  AlgoView make_view() const {
    AlgoView view;
    view.now = now_;
    view.period_minutes = config_.period_minutes;
    view.start = config_.start;
    view.infrastructure = algorithm_infra_ ? &*algorithm_infra_ : &network_.infrastructure();
    view.signals = &signals_;
    auto peak = monthly_peak_.find(month_key(period_start(config_.start, config_.period_minutes, now_)));
    view.peak_so_far_kw = peak == monthly_peak_.end() ? 0.0 : peak->second;
    const auto& slots = network_.slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i]) continue;
      const SessionEV& ev = *slots[i];
      const double remaining = remaining_demand(ev);
      if (remaining <= kDemandEpsilon) continue;
      view.sessions.push_back({ev.session_id, ev.station_id, i, ev.arrival, ev.estimated_departure, ev.requested,
                               remaining, ev.battery.max_rate});
    }
    return view;
  }

  void recompute_schedule() {
    const AlgoView view = make_view();
    try {
      schedule_ = algorithm_->schedule(view);
    } catch (const std::exception& e) {
      throw Error(Errc::algorithm_failure,
                  algorithm_->name() + " failed at period " + std::to_string(now_) + ": " + e.what());
    }
    schedule_origin_ = now_;
    std::set<std::string, std::less<>> active;
    for (const auto& s : view.sessions) active.insert(s.station_id);
    for (auto it = schedule_.begin(); it != schedule_.end();) {
      if (!network_.infrastructure().index_of(it->first)) {
        record_.warnings.push_back("period " + std::to_string(now_) + ": schedule names unknown station " +
                                   it->first + "; treated as 0");
        it = schedule_.erase(it);
      } else if (it->second.empty() || !active.count(it->first)) {
        it = schedule_.erase(it);
      } else {
        ++it;
      }
    }
  }

  double scheduled_rate(const std::string& station) const {
    auto it = schedule_.find(station);
    if (it == schedule_.end()) return 0.0;
    const auto& rates = it->second;
    const auto col = static_cast<std::size_t>(now_ - schedule_origin_);
    const double r = col < rates.size() ? rates[col] : rates.back();
    return std::isfinite(r) && r > 0.0 ? r : 0.0;
  }

  void charge_one_period() {
    const auto& infra = network_.infrastructure();
    const std::size_t n = infra.size();
    std::vector<double> pilots(n, 0.0), actuals(n, 0.0);
    double kw = 0.0;
    auto& slots = network_.slots();
    for (std::size_t i = 0; i < n; ++i) {
      if (!slots[i]) continue;
      SessionEV& ev = *slots[i];
      if (remaining_demand(ev) > kDemandEpsilon) {
        pilots[i] = clamp_pilot(infra.evses()[i].pilot, scheduled_rate(ev.station_id));
      }
      actuals[i] = ev.charge(pilots[i]);
      kw += infra.evses()[i].voltage * actuals[i] / 1000.0;
    }
    record_.currents.push_back(infra.currents(actuals));
    record_.pilots.push_back(std::move(pilots));
    record_.actuals.push_back(std::move(actuals));
    record_.aggregate_kw.push_back(kw);
    double& peak = monthly_peak_[month_key(period_start(config_.start, config_.period_minutes, now_))];
    peak = std::max(peak, kw);
  }

  void finish() {
    finished_ = true;
    auto& slots = network_.slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i]) continue;
      Departure d{std::move(*slots[i]), false, std::nullopt, network_.infrastructure().evses()[i].station_id};
      slots[i].reset();
      close_session(d, false);
    }
    // EVs still waiting at the horizon never got a space.
    for (const auto& ev : network_.waiting_queue()) close_session(Departure{ev, true, std::nullopt, std::nullopt}, false);
    record_.swaps = network_.swap_count();
    record_.diagnostics = algorithm_->diagnostics();
  }

  SimConfig config_;
  Network network_;
  std::optional<Infrastructure> algorithm_infra_;
  EventQueue queue_;
  std::shared_ptr<Algorithm> algorithm_;
  SimSignals signals_;
  SimRecord record_;
  Schedule schedule_;
  Period schedule_origin_ = 0;
  Period now_ = 0;
  bool finished_ = false;
  std::map<std::string, Period> original_arrival_;
  std::map<std::string, Period> plugged_at_;
  std::map<int, double> monthly_peak_;
};

// ---------------------------------------------------------------------------
// Record export

/// One row per period: timestamp, aggregate kW, pilots, actuals, constraint currents.
inline void write_record_csv(std::ostream& out, const SimRecord& r) {
  out << "period,timestamp,aggregate_kw";
  for (const auto& e : r.evses) out << ",pilot:" << e.station_id;
  for (const auto& e : r.evses) out << ",actual:" << e.station_id;
  for (const auto& c : r.constraints) out << ",current:" << c.id;
  out << '\n';
  for (std::size_t t = 0; t < r.periods(); ++t) {
    out << t << ',' << format_datetime(period_start(r.config.start, r.config.period_minutes, static_cast<Period>(t)))
        << ',' << format_number(r.aggregate_kw[t]);
    for (double v : r.pilots[t]) out << ',' << format_number(v);
    for (double v : r.actuals[t]) out << ',' << format_number(v);
    for (double v : r.currents[t]) out << ',' << format_number(v);
    out << '\n';
  }
}

inline nlohmann::json record_summary_json(const SimRecord& r) {
  using nlohmann::json;
  json sessions = json::array();
  for (const auto& s : r.sessions) {
    sessions.push_back({{"session_id", s.session_id},
                        {"station_id", s.station_id},
                        {"arrival", s.arrival},
                        {"plugged_at", s.plugged_at},
                        {"left_at", s.left_at},
                        {"departure", s.departure},
                        {"estimated_departure", s.estimated_departure},
                        {"requested", s.requested},
                        {"deliverable", s.deliverable},
                        {"delivered", s.delivered},
                        {"estimate_is_truth", s.estimate_is_truth},
                        {"left_early", s.left_early}});
  }
  json events = json::array();
  for (const auto& e : r.events) {
    events.push_back({{"timestamp", e.timestamp}, {"kind", e.kind}, {"session_id", e.session_id}, {"detail", e.detail}});
  }
  json config{{"period_minutes", r.config.period_minutes},
              {"start", format_datetime(r.config.start)},
              {"voltage", r.config.voltage},
              {"local_offset_minutes", r.config.local_offset_minutes}};
  if (r.config.horizon) config["horizon"] = *r.config.horizon;
  if (r.config.recompute_period) config["recompute_period"] = *r.config.recompute_period;
  json infra = infrastructure_to_json(Infrastructure(r.evses, r.constraints));
  return {{"config", config},
          {"algorithm", r.algorithm},
          {"periods", r.periods()},
          {"network", infra},
          {"swaps", r.swaps},
          {"sessions", sessions},
          {"events", events},
          {"warnings", r.warnings},
          {"diagnostics", r.diagnostics}};
}

/// Rebuild a record from its CSV series plus JSON summary (network, config, ledger).
inline SimRecord read_record(std::istream& csv, const nlohmann::json& summary) {
  SimRecord r;
  try {
    const auto& cfg = summary.at("config");
    r.config.period_minutes = cfg.at("period_minutes").get<double>();
    r.config.start = parse_datetime(cfg.at("start").get<std::string>());
    r.config.voltage = cfg.value("voltage", 208.0);
    r.algorithm = summary.value("algorithm", std::string());
    Infrastructure infra = infrastructure_from_json(summary.at("network"));
    r.evses = infra.evses();
    r.constraints = infra.constraints();
    r.swaps = summary.value("swaps", std::size_t{0});
    for (const auto& s : summary.value("sessions", nlohmann::json::array())) {
      SessionRecord sr;
      sr.session_id = s.at("session_id").get<std::string>();
      sr.station_id = s.value("station_id", std::string());
      sr.arrival = s.value("arrival", Period{0});
      sr.plugged_at = s.value("plugged_at", Period{-1});
      sr.left_at = s.value("left_at", Period{0});
      sr.departure = s.value("departure", Period{0});
      sr.estimated_departure = s.value("estimated_departure", Period{0});
      sr.requested = s.value("requested", 0.0);
      sr.deliverable = s.value("deliverable", 0.0);
      sr.delivered = s.value("delivered", 0.0);
      sr.estimate_is_truth = s.value("estimate_is_truth", false);
      sr.left_early = s.value("left_early", false);
      r.sessions.push_back(std::move(sr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("record summary: ") + e.what());
  }
  const std::size_t n = r.evses.size();
  const std::size_t m = r.constraints.size();
  std::string line;
  if (!std::getline(csv, line)) throw Error(Errc::parse_error, "record CSV is empty");
  std::size_t lineno = 1;
  while (std::getline(csv, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (cells.size() != 3 + 2 * n + m) {
      throw Error(Errc::parse_error, "record CSV line " + std::to_string(lineno) + " has " +
                                         std::to_string(cells.size()) + " cells");
    }
    auto num = [&](std::size_t k) { return std::stod(cells[k]); };
    r.aggregate_kw.push_back(num(2));
    std::vector<double> p(n), a(n), c(m);
    for (std::size_t i = 0; i < n; ++i) p[i] = num(3 + i);
    for (std::size_t i = 0; i < n; ++i) a[i] = num(3 + n + i);
    for (std::size_t j = 0; j < m; ++j) c[j] = num(3 + 2 * n + j);
    r.pilots.push_back(std::move(p));
    r.actuals.push_back(std::move(a));
    r.currents.push_back(std::move(c));
  }
  return r;
}

}  // namespace acnsim

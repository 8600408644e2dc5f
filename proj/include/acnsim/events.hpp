#pragma once

// Time-stamped event queue. Events pop in (timestamp, kind, insertion) order with
// unplugs ahead of plugins ahead of recomputes at equal timestamps.

#include <acnsim/common.hpp>
#include <acnsim/hardware.hpp>

#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <variant>
#include <vector>

namespace acnsim {

struct PluginEvent {
  SessionEV session;
};

struct UnplugEvent {
  std::string session_id;
};

/// Periodic re-solve request (e.g. MPC cadence); carries no payload.
struct RecomputeEvent {};

struct Event {
  Period timestamp = 0;
  std::variant<UnplugEvent, PluginEvent, RecomputeEvent> payload;
  std::uint64_t sequence = 0;  // assigned by the queue

  // Variant index doubles as the same-timestamp priority.
  int priority() const { return static_cast<int>(payload.index()); }
  bool is_plugin() const { return std::holds_alternative<PluginEvent>(payload); }
  bool is_unplug() const { return std::holds_alternative<UnplugEvent>(payload); }
  bool is_recompute() const { return std::holds_alternative<RecomputeEvent>(payload); }

  std::string_view kind_name() const {
    switch (payload.index()) {
      case 0: return "unplug";
      case 1: return "plugin";
      default: return "recompute";
    }
  }

  const std::string& session_id() const {
    static const std::string none;
    if (auto* u = std::get_if<UnplugEvent>(&payload)) return u->session_id;
    if (auto* p = std::get_if<PluginEvent>(&payload)) return p->session.session_id;
    return none;
  }
};

inline Event make_plugin(Period t, SessionEV session) { return {t, PluginEvent{std::move(session)}, 0}; }
inline Event make_unplug(Period t, std::string session_id) { return {t, UnplugEvent{std::move(session_id)}, 0}; }
inline Event make_recompute(Period t) { return {t, RecomputeEvent{}, 0}; }

class EventQueue {
 public:
  void enqueue(Event event) {
    if (event.timestamp < 0) throw Error(Errc::invalid_argument, "event timestamp must be >= 0");
    event.sequence = next_sequence_++;
    if (!event.is_recompute()) ++non_recompute_;
    heap_.push(std::move(event));
  }

  /// Remove and return every event with timestamp <= now, in pop order.
  std::vector<Event> pop_due(Period now) {
    std::vector<Event> out;
    while (!heap_.empty() && heap_.top().timestamp <= now) {
      out.push_back(heap_.top());
      heap_.pop();
      if (!out.back().is_recompute()) --non_recompute_;
    }
    return out;
  }

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  bool only_recompute_pending() const { return non_recompute_ == 0; }
  std::optional<Period> next_timestamp() const {
    if (heap_.empty()) return std::nullopt;
    return heap_.top().timestamp;
  }

  /// Pending events in pop order, without consuming them.
  std::vector<Event> snapshot() const {
    auto copy = heap_;
    std::vector<Event> out;
    out.reserve(copy.size());
    while (!copy.empty()) {
      out.push_back(copy.top());
      copy.pop();
    }
    return out;
  }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
      if (a.priority() != b.priority()) return a.priority() > b.priority();
      return a.sequence > b.sequence;
    }
  };

  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_sequence_ = 0;
  std::size_t non_recompute_ = 0;
};

// ---------------------------------------------------------------------------
// JSON lines: one event per line.

inline nlohmann::json battery_to_json(const Battery& b) {
  return {{"kind", b.kind == BatteryKind::ideal ? "ideal" : "two_stage"},
          {"capacity", b.capacity},
          {"charge", b.charge},
          {"initial_charge", b.initial_charge},
          {"max_rate", b.max_rate},
          {"threshold", b.threshold}};
}

inline Battery battery_from_json(const nlohmann::json& j) {
  Battery b;
  const std::string kind = j.value("kind", std::string("ideal"));
  if (kind == "ideal") {
    b.kind = BatteryKind::ideal;
  } else if (kind == "two_stage") {
    b.kind = BatteryKind::two_stage;
  } else {
    throw Error(Errc::parse_error, "unknown battery kind '" + kind + "'");
  }
  b.capacity = j.at("capacity").get<double>();
  b.charge = j.at("charge").get<double>();
  b.initial_charge = j.value("initial_charge", b.charge);
  b.max_rate = j.at("max_rate").get<double>();
  b.threshold = j.value("threshold", 0.8);
  b.validate();
  return b;
}

inline nlohmann::json session_to_json(const SessionEV& ev) {
  return {{"session_id", ev.session_id},
          {"station_id", ev.station_id},
          {"arrival", ev.arrival},
          {"departure", ev.departure},
          {"estimated_departure", ev.estimated_departure},
          {"requested", ev.requested},
          {"delivered", ev.delivered},
          {"estimate_is_truth", ev.estimate_is_truth},
          {"battery", battery_to_json(ev.battery)}};
}

inline SessionEV session_from_json(const nlohmann::json& j) {
  SessionEV ev;
  ev.session_id = j.at("session_id").get<std::string>();
  ev.station_id = j.value("station_id", std::string());
  ev.arrival = j.at("arrival").get<Period>();
  ev.departure = j.at("departure").get<Period>();
  ev.estimated_departure = j.value("estimated_departure", ev.departure);
  ev.requested = j.at("requested").get<double>();
  ev.delivered = j.value("delivered", 0.0);
  ev.estimate_is_truth = j.value("estimate_is_truth", false);
  ev.battery = battery_from_json(j.at("battery"));
  return ev;
}

inline nlohmann::json event_to_json(const Event& e) {
  nlohmann::json j{{"timestamp", e.timestamp}, {"kind", std::string(e.kind_name())}};
  if (auto* p = std::get_if<PluginEvent>(&e.payload)) j["session"] = session_to_json(p->session);
  if (auto* u = std::get_if<UnplugEvent>(&e.payload)) j["session_id"] = u->session_id;
  return j;
}

inline Event event_from_json(const nlohmann::json& j) {
  const Period t = j.at("timestamp").get<Period>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "plugin") return make_plugin(t, session_from_json(j.at("session")));
  if (kind == "unplug") return make_unplug(t, j.at("session_id").get<std::string>());
  if (kind == "recompute") return make_recompute(t);
  throw Error(Errc::parse_error, "unknown event kind '" + kind + "'");
}

inline void write_event_log(std::ostream& out, const EventQueue& queue) {
  for (const auto& e : queue.snapshot()) out << event_to_json(e).dump() << '\n';
}

inline EventQueue read_event_log(std::istream& in) {
  EventQueue queue;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      queue.enqueue(event_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse_error, "event log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return queue;
}

}  // namespace acnsim

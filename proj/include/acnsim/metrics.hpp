#pragma once

// Run metrics and grid-facing load profiles.

#include <acnsim/common.hpp>
#include <acnsim/engine.hpp>
#include <acnsim/signals.hpp>

#include "json.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace acnsim {

struct MetricsReport {
  std::optional<double> demand_met;  // absent with no requested energy
  double delivered = 0.0;            // A*periods
  double deliverable = 0.0;          // A*periods, capacity-capped requests
  double delivered_kwh = 0.0;
  std::size_t sessions = 0;
  std::size_t never_plugged = 0;
  std::size_t swaps = 0;
  double peak_kw = 0.0;
  std::size_t violation_periods = 0;
  double max_overload = 0.0;           // amps above the limit
  double max_overload_relative = 0.0;  // overload / limit
  std::string worst_constraint;
  std::optional<BillingBreakdown> billing;
};

inline MetricsReport compute_metrics(const SimRecord& record, const Tariff* tariff = nullptr,
                                     double tolerance = kFeasibilityTolerance) {
  MetricsReport m;
  m.sessions = record.sessions.size();
  for (const auto& s : record.sessions) {
    m.deliverable += s.deliverable;
    m.delivered += std::min(s.delivered, s.deliverable);
    if (s.plugged_at < 0) ++m.never_plugged;
  }
  if (m.deliverable > 0.0) m.demand_met = std::clamp(m.delivered / m.deliverable, 0.0, 1.0);
  m.swaps = record.swaps;
  const double hours = record.config.period_minutes / 60.0;
  for (double kw : record.aggregate_kw) {
    m.peak_kw = std::max(m.peak_kw, kw);
    m.delivered_kwh += kw * hours;
  }
  for (const auto& row : record.currents) {
    bool violated = false;
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double limit = record.constraints[j].limit;
      const double over = row[j] - limit;
      if (over > tolerance) {
        violated = true;
        if (over > m.max_overload) {
          m.max_overload = over;
          m.worst_constraint = record.constraints[j].id;
        }
        if (limit > 0.0) m.max_overload_relative = std::max(m.max_overload_relative, over / limit);
      }
    }
    if (violated) ++m.violation_periods;
  }
  if (tariff) {
    m.billing = billing_cost(record.load_profile(), *tariff);
  } else {
    m.billing = BillingBreakdown{};
    m.billing->energy_kwh = m.delivered_kwh;
    if (m.delivered_kwh > 0.0) m.billing->per_kwh = 0.0;
  }
  return m;
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  using nlohmann::json;
  json j{{"delivered_amp_periods", m.delivered},
         {"deliverable_amp_periods", m.deliverable},
         {"delivered_kwh", m.delivered_kwh},
         {"sessions", m.sessions},
         {"never_plugged", m.never_plugged},
         {"swaps", m.swaps},
         {"peak_kw", m.peak_kw},
         {"violation_periods", m.violation_periods},
         {"max_overload_amps", m.max_overload},
         {"max_overload_relative", m.max_overload_relative},
         {"worst_constraint", m.worst_constraint}};
  j["demand_met"] = m.demand_met ? json(*m.demand_met) : json(nullptr);
  if (m.billing) {
    j["energy_cost"] = m.billing->energy_cost;
    j["demand_cost"] = m.billing->demand_cost;
    j["total_cost"] = m.billing->total;
    j["cost_per_kwh"] = m.billing->per_kwh ? json(*m.billing->per_kwh) : json(nullptr);
  }
  return j;
}

/// Phase label for grouping EVSEs: the angle normalized to (-180, 180].
inline double normalized_angle(double degrees) {
  double a = std::fmod(degrees, 360.0);
  if (a <= -180.0) a += 360.0;
  if (a > 180.0) a -= 360.0;
  return a;
}

/// Per-period aggregate kW, plus one column per distinct phase angle when requested.
inline void export_load_profile(std::ostream& out, const SimRecord& record, bool phases) {
  std::map<double, std::vector<std::size_t>> groups;
  if (phases) {
    for (std::size_t i = 0; i < record.evses.size(); ++i) {
      groups[normalized_angle(record.evses[i].phase_angle)].push_back(i);
    }
  }
  out << "timestamp,aggregate_kw";
  for (const auto& [angle, members] : groups) out << ",phase_" << format_number(angle) << "_kw";
  out << '\n';
  for (std::size_t t = 0; t < record.periods(); ++t) {
    out << format_datetime(period_start(record.config.start, record.config.period_minutes, static_cast<Period>(t)))
        << ',' << format_number(record.aggregate_kw[t]);
    for (const auto& [angle, members] : groups) {
      double kw = 0.0;
      for (std::size_t i : members) kw += record.evses[i].voltage * record.actuals[t][i] / 1000.0;
      out << ',' << format_number(kw);
    }
    out << '\n';
  }
}

}  // namespace acnsim

#pragma once

// Baseline online schedulers: uncontrolled, round robin and the sorting family.

#include <acnsim/engine.hpp>
#include <acnsim/hardware.hpp>
#include <acnsim/network.hpp>

#include <algorithm>
#include <deque>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace acnsim {

enum class SortKey { fcfs, lcfs, edf, lrpt, llf };

inline std::string to_string(SortKey key) {
  switch (key) {
    case SortKey::fcfs: return "fcfs";
    case SortKey::lcfs: return "lcfs";
    case SortKey::edf: return "edf";
    case SortKey::lrpt: return "lrpt";
    case SortKey::llf: return "llf";
  }
  return "fcfs";
}

inline SortKey sort_key_from_string(std::string_view name) {
  for (SortKey k : {SortKey::fcfs, SortKey::lcfs, SortKey::edf, SortKey::lrpt, SortKey::llf}) {
    if (to_string(k) == name) return k;
  }
  throw Error(Errc::invalid_argument, "unknown sort key '" + std::string(name) + "'");
}

/// Periods of slack before the session can no longer finish at its top rate. May be negative.
inline double laxity(double time_to_deadline, double remaining, double effective_max) {
  return time_to_deadline - (effective_max > 0.0 ? remaining / effective_max : 0.0);
}

inline double laxity(const AlgoView& view, const ActiveSession& s) {
  return laxity(static_cast<double>(s.estimated_departure - view.now), s.remaining, view.effective_max(s));
}

namespace detail {

inline Schedule to_schedule(const AlgoView& view, const std::vector<double>& dense) {
  Schedule out;
  for (const auto& s : view.sessions) out[s.station_id] = {dense[s.evse]};
  return out;
}

/// Reverse-order reduction to the next lower emittable pilot, one full pass; anything
/// still infeasible is zeroed from the back. Returns the number of EVs that were zeroed.
inline std::size_t repair_quantized(const AlgoView& view, const std::vector<std::size_t>& order,
                                    std::vector<double>& rates) {
  const auto& infra = view.infra();
  if (infra.feasible(rates)) return 0;
  for (auto it = order.rbegin(); it != order.rend() && !infra.feasible(rates); ++it) {
    const auto& s = view.sessions[*it];
    rates[s.evse] = next_pilot_below(view.pilot(s), rates[s.evse]);
  }
  std::size_t zeroed = 0;
  for (auto it = order.rbegin(); it != order.rend() && !infra.feasible(rates); ++it) {
    const auto& s = view.sessions[*it];
    if (rates[s.evse] > 0.0) ++zeroed;
    rates[s.evse] = 0.0;
  }
  return zeroed;
}

}  // namespace detail

/// Every active session at its EVSE maximum. Network limits are ignored on purpose.
class Uncontrolled final : public Algorithm {
 public:
  std::string name() const override { return "uncontrolled"; }

  Schedule schedule(const AlgoView& view) override {
    Schedule out;
    for (const auto& s : view.sessions) out[s.station_id] = {view.evse(s).max_rate()};
    return out;
  }
};

class RoundRobin final : public Algorithm {
 public:
  std::string name() const override { return "round_robin"; }

  Schedule schedule(const AlgoView& view) override {
    return detail::to_schedule(view, rates(view));
  }

  /// Dense per-EVSE rates.
  static std::vector<double> rates(const AlgoView& view) {
    const auto& infra = view.infra();
    std::vector<double> r(infra.size(), 0.0);
    std::vector<std::size_t> order(view.sessions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = view.sessions[a];
      const auto& y = view.sessions[b];
      if (x.arrival != y.arrival) return x.arrival < y.arrival;
      return x.station_id < y.station_id;
    });
    std::deque<std::size_t> queue(order.begin(), order.end());
    while (!queue.empty()) {
      const std::size_t k = queue.front();
      queue.pop_front();
      const auto& s = view.sessions[k];
      const double current = r[s.evse];
      const double next = next_pilot_above(view.pilot(s), current);
      if (next <= current || next > view.upper_bound(s) + kFeasibilityTolerance) continue;
      r[s.evse] = next;
      if (infra.feasible(r)) {
        queue.push_back(k);
      } else {
        r[s.evse] = current;
      }
    }
    return r;
  }
};

class SortedSchedule final : public Algorithm {
 public:
  explicit SortedSchedule(SortKey key) : key_(key) {}

  std::string name() const override { return to_string(key_); }
  SortKey key() const { return key_; }

  Schedule schedule(const AlgoView& view) override {
    return detail::to_schedule(view, rates(view));
  }

  std::vector<std::size_t> order(const AlgoView& view) const {
    std::vector<double> metric(view.sessions.size());
    for (std::size_t k = 0; k < view.sessions.size(); ++k) {
      const auto& s = view.sessions[k];
      switch (key_) {
        case SortKey::fcfs: metric[k] = static_cast<double>(s.arrival); break;
        case SortKey::lcfs: metric[k] = -static_cast<double>(s.arrival); break;
        case SortKey::edf: metric[k] = static_cast<double>(s.estimated_departure); break;
        case SortKey::lrpt: {
          const double m = view.effective_max(s);
          metric[k] = -(m > 0.0 ? s.remaining / m : 0.0);
          break;
        }
        case SortKey::llf: metric[k] = laxity(view, s); break;
      }
    }
    std::vector<std::size_t> idx(view.sessions.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (metric[a] != metric[b]) return metric[a] < metric[b];
      return view.sessions[a].station_id < view.sessions[b].station_id;
    });
    return idx;
  }

  std::vector<double> rates(const AlgoView& view) {
    const auto& infra = view.infra();
    std::vector<double> r(infra.size(), 0.0);
    const auto idx = order(view);
    for (std::size_t k : idx) {
      const auto& s = view.sessions[k];
      const double best = max_feasible_rate(infra, s.evse, r, view.upper_bound(s));
      r[s.evse] = clamp_pilot(view.pilot(s), best);
    }
    const std::size_t zeroed = detail::repair_quantized(view, idx, r);
    if (zeroed > 0) repairs_ += zeroed;
    return r;
  }

  nlohmann::json diagnostics() const override { return {{"quantization_repairs", repairs_}}; }

 private:
  SortKey key_;
  std::size_t repairs_ = 0;
};

}  // namespace acnsim

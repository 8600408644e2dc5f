#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace acnsim {

/// Simulation time is a count of fixed-length periods from the configured start.
using Period = std::int64_t;

/// Tolerance (amps) used when checking magnitude constraints.
inline constexpr double kFeasibilityTolerance = 1e-6;

/// Remaining demand below this many A*periods counts as satisfied.
inline constexpr double kDemandEpsilon = 1e-6;

enum class Errc {
  unknown_evse,
  negative_rate,
  negative_pilot,
  infeasible_fixed_rates,
  nonpositive_argument,
  invalid_argument,
  occupied_evse,
  uncovered_instant,
  period_mismatch,
  unknown_term,
  infeasible_program,
  rejection_budget_exhausted,
  parse_error,
  io_error,
  algorithm_failure,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::unknown_evse: return "unknown-evse-id";
    case Errc::negative_rate: return "negative-rate";
    case Errc::negative_pilot: return "negative-pilot";
    case Errc::infeasible_fixed_rates: return "infeasible-fixed-rates";
    case Errc::nonpositive_argument: return "nonpositive-argument";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::occupied_evse: return "occupied-evse";
    case Errc::uncovered_instant: return "uncovered-instant";
    case Errc::period_mismatch: return "period-mismatch";
    case Errc::unknown_term: return "unknown-term";
    case Errc::infeasible_program: return "infeasible-program";
    case Errc::rejection_budget_exhausted: return "rejection-budget-exhausted";
    case Errc::parse_error: return "parse-error";
    case Errc::io_error: return "io-error";
    case Errc::algorithm_failure: return "algorithm-failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Shortest round-trip decimal form of a double (locale independent).
inline std::string format_number(double value) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

// Warning sink. Defaults to std::clog; tests swap it to capture messages.
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view msg) {
    std::clog << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view message) {
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  if (auto& sink = warning_sink()) sink(message);
}

/// RAII override of the warning sink.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(std::function<void(std::string_view)> sink)
      : previous_(std::exchange(warning_sink(), std::move(sink))) {}
  ~ScopedWarningSink() { warning_sink() = std::move(previous_); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  std::function<void(std::string_view)> previous_;
};

}  // namespace acnsim

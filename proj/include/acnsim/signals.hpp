#pragma once

// Tariffs, exogenous time series and cost accounting.
//
// Datetimes are naive local wall-clock times (std::chrono::sys_seconds used as a
// calendar). Inputs carrying a UTC offset are shifted into the configured local offset.

#include <acnsim/common.hpp>

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace acnsim {

using DateTime = std::chrono::sys_seconds;

/// Parse "YYYY-MM-DD[THH:MM[:SS]][Z|+HH:MM|-HH:MM]". A trailing offset converts the
/// instant into local time at `local_offset_minutes`.
inline DateTime parse_datetime(const std::string& text, int local_offset_minutes = 0) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) != 3) {
    throw Error(Errc::parse_error, "bad datetime '" + text + "'");
  }
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < text.size() && (text[pos] == 'T' || text[pos] == ' ')) {
    int n = 0;
    if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d%n", &h, &mi, &n) != 2) {
      throw Error(Errc::parse_error, "bad time in '" + text + "'");
    }
    pos += 1 + static_cast<std::size_t>(n);
    if (pos < text.size() && text[pos] == ':') {
      if (std::sscanf(text.c_str() + pos + 1, "%2d%n", &s, &n) != 1) {
        throw Error(Errc::parse_error, "bad seconds in '" + text + "'");
      }
      pos += 1 + static_cast<std::size_t>(n);
      if (pos < text.size() && text[pos] == '.') {  // fractional seconds are dropped
        ++pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
      }
    }
  }
  std::optional<int> offset;
  if (pos < text.size()) {
    if (text[pos] == 'Z') {
      offset = 0;
      ++pos;
    } else if (text[pos] == '+' || text[pos] == '-') {
      int oh = 0, om = 0;
      if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2) {
        throw Error(Errc::parse_error, "bad UTC offset in '" + text + "'");
      }
      offset = (text[pos] == '-' ? -1 : 1) * (oh * 60 + om);
      pos = text.size();
    }
  }
  if (pos != text.size()) throw Error(Errc::parse_error, "trailing characters in '" + text + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw Error(Errc::parse_error, "invalid datetime '" + text + "'");
  DateTime t = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
  if (offset) t += minutes{local_offset_minutes - *offset};
  return t;
}

inline std::string format_datetime(DateTime t) {
  using namespace std::chrono;
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{t - day_point};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

inline DateTime period_start(DateTime start, double period_minutes, Period index) {
  return start + std::chrono::seconds{static_cast<std::int64_t>(std::llround(index * period_minutes * 60.0))};
}

/// Billing month key (year*12 + month-1).
inline int month_key(DateTime t) {
  using namespace std::chrono;
  const year_month_day ymd{floor<days>(t)};
  return static_cast<int>(ymd.year()) * 12 + static_cast<int>(static_cast<unsigned>(ymd.month())) - 1;
}

inline bool is_weekend(DateTime t) {
  using namespace std::chrono;
  const weekday wd{floor<days>(t)};
  return wd == Saturday || wd == Sunday;
}

// ---------------------------------------------------------------------------
// Tariffs

struct TouBand {
  double start_hour = 0.0;  // inclusive
  double end_hour = 24.0;   // exclusive
  double price = 0.0;       // $/kWh
};

enum class DayClass { all, weekday, weekend };

struct DaySchedule {
  DayClass days = DayClass::all;
  std::vector<TouBand> bands;
};

/// Inclusive month/day range; may wrap over the new year.
struct Season {
  unsigned start_month = 1, start_day = 1;
  unsigned end_month = 12, end_day = 31;
  std::vector<DaySchedule> schedules;

  bool contains(unsigned month, unsigned day) const {
    const unsigned key = month * 100 + day;
    const unsigned lo = start_month * 100 + start_day;
    const unsigned hi = end_month * 100 + end_day;
    return lo <= hi ? (key >= lo && key <= hi) : (key >= lo || key <= hi);
  }
};

struct Tariff {
  std::string name;
  std::vector<Season> seasons;
  double demand_charge = 0.0;  // $/kW of monthly peak
};

namespace detail {

inline bool covers(DayClass c, bool weekend) {
  return c == DayClass::all || (c == DayClass::weekend) == weekend;
}

inline void validate_bands(const std::string& where, std::vector<TouBand> bands) {
  std::sort(bands.begin(), bands.end(), [](const TouBand& a, const TouBand& b) { return a.start_hour < b.start_hour; });
  double cursor = 0.0;
  for (const auto& b : bands) {
    if (b.price < 0.0) throw Error(Errc::invalid_argument, where + ": negative price");
    if (!(b.end_hour > b.start_hour)) throw Error(Errc::invalid_argument, where + ": empty time band");
    if (b.start_hour < cursor) throw Error(Errc::invalid_argument, where + ": overlapping time bands");
    if (b.start_hour > cursor) throw Error(Errc::invalid_argument, where + ": gap in time bands");
    cursor = b.end_hour;
  }
  if (cursor != 24.0) throw Error(Errc::invalid_argument, where + ": time bands do not cover the day");
}

}  // namespace detail

/// Rejects tariffs where some instant has no price or more than one.
inline void validate_tariff(const Tariff& tariff) {
  if (tariff.demand_charge < 0.0) throw Error(Errc::invalid_argument, "negative demand charge");
  using namespace std::chrono;
  for (sys_days d = sys_days{year{2000} / January / 1}; d < sys_days{year{2001} / January / 1}; d += days{1}) {
    const year_month_day ymd{d};
    const unsigned m = static_cast<unsigned>(ymd.month());
    const unsigned dd = static_cast<unsigned>(ymd.day());
    int hits = 0;
    for (const auto& s : tariff.seasons) hits += s.contains(m, dd) ? 1 : 0;
    if (hits != 1) {
      throw Error(Errc::invalid_argument, "tariff " + tariff.name + ": " + std::to_string(m) + "/" +
                                              std::to_string(dd) + " is covered by " + std::to_string(hits) +
                                              " seasons");
    }
  }
  for (const auto& s : tariff.seasons) {
    for (bool weekend : {false, true}) {
      int hits = 0;
      for (const auto& sched : s.schedules) {
        if (detail::covers(sched.days, weekend)) {
          ++hits;
          detail::validate_bands(tariff.name, sched.bands);
        }
      }
      if (hits != 1) {
        throw Error(Errc::invalid_argument, "tariff " + tariff.name + ": season has " + std::to_string(hits) +
                                                (weekend ? " weekend" : " weekday") + " schedules");
      }
    }
  }
}

inline double price_at(const Tariff& tariff, DateTime t) {
  using namespace std::chrono;
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const unsigned m = static_cast<unsigned>(ymd.month());
  const unsigned d = static_cast<unsigned>(ymd.day());
  const double hour = duration<double>(t - day_point).count() / 3600.0;
  const bool weekend = is_weekend(t);
  for (const auto& season : tariff.seasons) {
    if (!season.contains(m, d)) continue;
    for (const auto& sched : season.schedules) {
      if (!detail::covers(sched.days, weekend)) continue;
      for (const auto& band : sched.bands) {
        if (hour >= band.start_hour && hour < band.end_hour) return band.price;
      }
    }
  }
  throw Error(Errc::uncovered_instant, "tariff " + tariff.name + " has no price at " + format_datetime(t));
}

inline Tariff flat_tariff(double price, double demand_charge = 0.0, std::string name = "flat") {
  return Tariff{std::move(name), {Season{1, 1, 12, 31, {DaySchedule{DayClass::all, {{0.0, 24.0, price}}}}}},
                demand_charge};
}

/// Built-in two-season TOU schedule with a demand charge, shaped like a commercial EV rate
/// (weekday on-peak 12:00-18:00). The prices are illustrative placeholders, not a utility's
/// published numbers.
inline Tariff tou_ev_tariff() {
  Tariff t;
  t.name = "tou_ev_placeholder";
  t.demand_charge = 15.0;
  const DaySchedule summer_weekday{DayClass::weekday, {{0.0, 8.0, 0.09}, {8.0, 12.0, 0.12}, {12.0, 18.0, 0.32}, {18.0, 24.0, 0.12}}};
  const DaySchedule winter_weekday{DayClass::weekday, {{0.0, 8.0, 0.09}, {8.0, 12.0, 0.11}, {12.0, 18.0, 0.20}, {18.0, 24.0, 0.11}}};
  const DaySchedule weekend{DayClass::weekend, {{0.0, 24.0, 0.09}}};
  t.seasons.push_back(Season{6, 1, 9, 30, {summer_weekday, weekend}});
  t.seasons.push_back(Season{10, 1, 5, 31, {winter_weekday, weekend}});
  return t;
}

inline std::optional<Tariff> builtin_tariff(const std::string& name) {
  if (name == "flat") return flat_tariff(0.1);
  if (name == "tou_ev_placeholder") return tou_ev_tariff();
  return std::nullopt;
}

inline DayClass day_class_from_string(const std::string& s) {
  if (s == "all") return DayClass::all;
  if (s == "weekday") return DayClass::weekday;
  if (s == "weekend") return DayClass::weekend;
  throw Error(Errc::parse_error, "unknown day class '" + s + "'");
}

inline std::string to_string(DayClass c) {
  switch (c) {
    case DayClass::all: return "all";
    case DayClass::weekday: return "weekday";
    case DayClass::weekend: return "weekend";
  }
  return "all";
}

inline Tariff tariff_from_json(const nlohmann::json& j) {
  try {
    Tariff t;
    t.name = j.value("name", std::string("custom"));
    t.demand_charge = j.value("demand_charge", 0.0);
    for (const auto& s : j.at("seasons")) {
      Season season;
      season.start_month = s.value("start_month", 1u);
      season.start_day = s.value("start_day", 1u);
      season.end_month = s.value("end_month", 12u);
      season.end_day = s.value("end_day", 31u);
      for (const auto& sched : s.at("schedules")) {
        DaySchedule ds;
        ds.days = day_class_from_string(sched.value("days", std::string("all")));
        for (const auto& b : sched.at("bands")) {
          ds.bands.push_back({b.at("start_hour").get<double>(), b.at("end_hour").get<double>(), b.at("price").get<double>()});
        }
        season.schedules.push_back(std::move(ds));
      }
      t.seasons.push_back(std::move(season));
    }
    validate_tariff(t);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("tariff: ") + e.what());
  }
}

inline nlohmann::json tariff_to_json(const Tariff& t) {
  nlohmann::json seasons = nlohmann::json::array();
  for (const auto& s : t.seasons) {
    nlohmann::json scheds = nlohmann::json::array();
    for (const auto& sched : s.schedules) {
      nlohmann::json bands = nlohmann::json::array();
      for (const auto& b : sched.bands) bands.push_back({{"start_hour", b.start_hour}, {"end_hour", b.end_hour}, {"price", b.price}});
      scheds.push_back({{"days", to_string(sched.days)}, {"bands", bands}});
    }
    seasons.push_back({{"start_month", s.start_month}, {"start_day", s.start_day}, {"end_month", s.end_month},
                       {"end_day", s.end_day}, {"schedules", scheds}});
  }
  return {{"name", t.name}, {"demand_charge", t.demand_charge}, {"seasons", seasons}};
}

// ---------------------------------------------------------------------------
// Exogenous series

struct TimeSeriesSignal {
  DateTime start{};
  double period_minutes = 5.0;
  std::vector<double> values;  // kW
};

/// Value at a period index. Indices outside the series read as 0 with a warning.
inline double signal_at(const TimeSeriesSignal& signal, Period index) {
  if (index < 0 || static_cast<std::size_t>(index) >= signal.values.size()) {
    warn("signal index " + std::to_string(index) + " outside series of length " +
         std::to_string(signal.values.size()) + "; using 0");
    return 0.0;
  }
  return signal.values[static_cast<std::size_t>(index)];
}

/// Same, checking the series was sampled at the simulation's period length.
inline double signal_at(const TimeSeriesSignal& signal, Period index, double sim_period_minutes) {
  if (std::abs(signal.period_minutes - sim_period_minutes) > 1e-9) {
    throw Error(Errc::period_mismatch, "signal sampled every " + std::to_string(signal.period_minutes) +
                                           " min, simulation uses " + std::to_string(sim_period_minutes));
  }
  return signal_at(signal, index);
}

/// CSV with a header row and (timestamp, kW) rows at uniform spacing.
inline TimeSeriesSignal read_signal_csv(std::istream& in, int local_offset_minutes = 0) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::parse_error, "signal CSV is empty");
  std::vector<DateTime> stamps;
  TimeSeriesSignal signal;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(Errc::parse_error, "signal CSV line " + std::to_string(lineno));
    stamps.push_back(parse_datetime(line.substr(0, comma), local_offset_minutes));
    try {
      signal.values.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw Error(Errc::parse_error, "signal CSV line " + std::to_string(lineno) + ": bad value");
    }
  }
  if (stamps.empty()) throw Error(Errc::parse_error, "signal CSV has no rows");
  signal.start = stamps.front();
  if (stamps.size() > 1) {
    const auto step = stamps[1] - stamps[0];
    if (step.count() <= 0) throw Error(Errc::parse_error, "signal CSV timestamps must increase");
    for (std::size_t i = 2; i < stamps.size(); ++i) {
      if (stamps[i] - stamps[i - 1] != step) throw Error(Errc::parse_error, "signal CSV spacing is not uniform");
    }
    signal.period_minutes = static_cast<double>(step.count()) / 60.0;
  }
  return signal;
}

// ---------------------------------------------------------------------------
// Billing

/// Aggregate power draw on a uniform time axis.
struct LoadProfile {
  DateTime start{};
  double period_minutes = 5.0;
  std::vector<double> kw;
};

struct BillingBreakdown {
  double energy_kwh = 0.0;
  double energy_cost = 0.0;
  double demand_cost = 0.0;
  double total = 0.0;
  std::optional<double> per_kwh;  // absent when no energy was delivered
};

inline BillingBreakdown billing_cost(const LoadProfile& load, const Tariff& tariff) {
  BillingBreakdown out;
  std::map<int, double> monthly_peak;
  const double hours = load.period_minutes / 60.0;
  for (std::size_t t = 0; t < load.kw.size(); ++t) {
    const DateTime when = period_start(load.start, load.period_minutes, static_cast<Period>(t));
    const double kwh = load.kw[t] * hours;
    out.energy_kwh += kwh;
    if (kwh != 0.0) out.energy_cost += price_at(tariff, when) * kwh;
    double& peak = monthly_peak[month_key(when)];
    peak = std::max(peak, load.kw[t]);
  }
  for (const auto& [month, peak] : monthly_peak) out.demand_cost += tariff.demand_charge * peak;
  out.total = out.energy_cost + out.demand_cost;
  if (out.energy_kwh > 0.0) out.per_kwh = out.total / out.energy_kwh;
  return out;
}

}  // namespace acnsim

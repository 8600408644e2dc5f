#pragma once

// Event sources: recorded charging sessions and Gaussian-mixture sampling.

#include <acnsim/common.hpp>
#include <acnsim/events.hpp>
#include <acnsim/hardware.hpp>
#include <acnsim/signals.hpp>

#include "json.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace acnsim {

/// How recorded sessions become simulator events.
struct IngestOptions {
  double period_minutes = 5.0;
  DateTime start{};
  int local_offset_minutes = 0;
  double voltage = 208.0;
  /// Per-station voltage for the kWh conversion; falls back to `voltage`.
  std::function<std::optional<double>(const std::string&)> station_voltage;
  BatteryProfile battery;
  double battery_capacity_kwh = 0.0;  // 0 sizes each pack to its request
  bool use_user_request = false;      // take requested_kwh over energy_kwh when present
  double estimate_noise_periods = 0.0;  // std-dev of additive noise on estimates; 0 = off
  std::uint64_t seed = 0;
  /// canonical field -> field name used in the file
  std::map<std::string, std::string> field_names;
};

struct IngestResult {
  EventQueue events;
  std::size_t accepted = 0;
  std::size_t skipped = 0;  // malformed
  std::size_t dropped = 0;  // zero duration after snapping
  std::size_t estimates_defaulted = 0;
  std::vector<std::string> log;
};

namespace detail {

inline std::string field(const IngestOptions& o, const std::string& canonical) {
  auto it = o.field_names.find(canonical);
  return it == o.field_names.end() ? canonical : it->second;
}

inline double periods_since(DateTime start, DateTime t, double period_minutes) {
  return std::chrono::duration<double>(t - start).count() / (period_minutes * 60.0);
}

inline double voltage_for(const IngestOptions& o, const std::string& station) {
  if (o.station_voltage) {
    if (auto v = o.station_voltage(station)) return *v;
  }
  return o.voltage;
}

inline BatteryProfile profile_for(const IngestOptions& o, double voltage) {
  BatteryProfile p = o.battery;
  p.capacity = o.battery_capacity_kwh > 0.0 ? kwh_to_amp_periods(o.battery_capacity_kwh, voltage, o.period_minutes)
                                             : 0.0;
  return p;
}

inline double energy_to_amp_periods(double kwh, double voltage, double period_minutes) {
  return kwh > 0.0 ? kwh_to_amp_periods(kwh, voltage, period_minutes) : 0.0;
}

}  // namespace detail

/// Convert session records to plugin/unplug pairs. Arrivals snap down to the period
/// grid and departures snap up, so no window is ever shortened.
inline IngestResult sessions_to_events(const nlohmann::json& document, const IngestOptions& options) {
  if (!(options.period_minutes > 0.0)) throw Error(Errc::nonpositive_argument, "period length must be positive");
  const nlohmann::json* records = &document;
  if (document.is_object()) {
    if (!document.contains("sessions")) throw Error(Errc::parse_error, "session file has no 'sessions' array");
    records = &document.at("sessions");
  }
  if (!records->is_array()) throw Error(Errc::parse_error, "session records must be an array");

  IngestResult out;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, std::max(options.estimate_noise_periods, 0.0));
  std::size_t position = 0;
  for (const auto& rec : *records) {
    ++position;
    const std::string where = "record " + std::to_string(position);
    try {
      const std::string id = rec.at(detail::field(options, "session_id")).get<std::string>();
      const std::string station = rec.at(detail::field(options, "station_id")).get<std::string>();
      const DateTime connect =
          parse_datetime(rec.at(detail::field(options, "connection_time")).get<std::string>(), options.local_offset_minutes);
      const DateTime disconnect = parse_datetime(rec.at(detail::field(options, "disconnect_time")).get<std::string>(),
                                                 options.local_offset_minutes);
      double kwh = rec.at(detail::field(options, "energy_kwh")).get<double>();
      const std::string req_field = detail::field(options, "requested_kwh");
      if (options.use_user_request && rec.contains(req_field) && !rec.at(req_field).is_null()) {
        kwh = rec.at(req_field).get<double>();
      }
      if (!(disconnect > connect) || !(kwh >= 0.0)) {
        ++out.skipped;
        out.log.push_back(where + " (" + id + "): needs disconnect > connect and energy >= 0; skipped");
        continue;
      }
      const auto arrival =
          static_cast<Period>(std::floor(detail::periods_since(options.start, connect, options.period_minutes)));
      const auto departure =
          static_cast<Period>(std::ceil(detail::periods_since(options.start, disconnect, options.period_minutes)));
      if (arrival < 0) {
        ++out.skipped;
        out.log.push_back(where + " (" + id + "): connects before the simulation start; skipped");
        continue;
      }
      if (departure <= arrival) {
        ++out.dropped;
        out.log.push_back(where + " (" + id + "): zero duration after snapping; dropped");
        continue;
      }
      Period estimate = departure;
      bool truth = true;
      const std::string est_field = detail::field(options, "estimated_departure");
      if (rec.contains(est_field) && !rec.at(est_field).is_null()) {
        const DateTime est = parse_datetime(rec.at(est_field).get<std::string>(), options.local_offset_minutes);
        estimate = static_cast<Period>(std::ceil(detail::periods_since(options.start, est, options.period_minutes)));
        estimate = std::max(estimate, arrival + 1);
        truth = false;
      } else {
        ++out.estimates_defaulted;
        out.log.push_back(where + " (" + id + "): no estimated departure; using the actual departure");
      }
      if (options.estimate_noise_periods > 0.0) {
        estimate = std::max(arrival + 1, estimate + static_cast<Period>(std::llround(noise(rng))));
        truth = false;
      }
      const double volts = detail::voltage_for(options, station);
      SessionEV ev = make_session(id, station, arrival, departure, estimate,
                                  detail::energy_to_amp_periods(kwh, volts, options.period_minutes),
                                  detail::profile_for(options, volts));
      ev.estimate_is_truth = truth;
      out.events.enqueue(make_unplug(departure, id));
      out.events.enqueue(make_plugin(arrival, std::move(ev)));
      ++out.accepted;
    } catch (const nlohmann::json::exception& e) {
      ++out.skipped;
      out.log.push_back(where + ": malformed (" + std::string(e.what()) + "); skipped");
    } catch (const Error& e) {
      if (e.code() != Errc::parse_error && e.code() != Errc::invalid_argument) throw;
      ++out.skipped;
      out.log.push_back(where + ": " + std::string(e.what()) + "; skipped");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian mixture over (arrival hour, sojourn hours, energy kWh)

struct MixtureComponent {
  double weight = 1.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
};

struct ArrivalsPerDay {
  enum class Kind { fixed, poisson };
  Kind kind = Kind::fixed;
  double value = 100.0;  // count, or Poisson mean
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;
  ArrivalsPerDay arrivals;
  std::array<bool, 7> day_mask{true, true, true, true, true, false, false};  // Monday first

  void validate() const {
    if (components.empty()) throw Error(Errc::invalid_argument, "mixture has no components");
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.weight >= 0.0)) throw Error(Errc::invalid_argument, "mixture weights must be non-negative");
      total += c.weight;
      if ((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
        throw Error(Errc::invalid_argument, "mixture covariance must be symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(c.covariance);
      if (eig.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff())) {
        throw Error(Errc::invalid_argument, "mixture covariance must be positive semidefinite");
      }
    }
    if (std::abs(total - 1.0) > 1e-6) throw Error(Errc::invalid_argument, "mixture weights must sum to 1");
    if (!(arrivals.value >= 0.0)) throw Error(Errc::invalid_argument, "arrivals per day must be non-negative");
  }
};

inline MixtureSpec mixture_from_json(const nlohmann::json& j) {
  MixtureSpec spec;
  try {
    for (const auto& c : j.at("components")) {
      MixtureComponent comp;
      comp.weight = c.at("weight").get<double>();
      const auto mean = c.at("mean").get<std::vector<double>>();
      const auto cov = c.at("covariance").get<std::vector<std::vector<double>>>();
      if (mean.size() != 3 || cov.size() != 3) throw Error(Errc::parse_error, "mixture components are 3-dimensional");
      for (int r = 0; r < 3; ++r) {
        comp.mean[r] = mean[r];
        if (cov[r].size() != 3) throw Error(Errc::parse_error, "covariance must be 3x3");
        for (int k = 0; k < 3; ++k) comp.covariance(r, k) = cov[r][k];
      }
      spec.components.push_back(comp);
    }
    if (j.contains("arrivals_per_day")) {
      const auto& a = j.at("arrivals_per_day");
      if (a.is_number()) {
        spec.arrivals = {ArrivalsPerDay::Kind::fixed, a.get<double>()};
      } else {
        const std::string kind = a.at("kind").get<std::string>();
        if (kind == "fixed") {
          spec.arrivals = {ArrivalsPerDay::Kind::fixed, a.at("count").get<double>()};
        } else if (kind == "poisson") {
          spec.arrivals = {ArrivalsPerDay::Kind::poisson, a.at("mean").get<double>()};
        } else {
          throw Error(Errc::parse_error, "arrivals_per_day kind must be fixed or poisson");
        }
      }
    }
    if (j.contains("day_mask")) {
      const auto mask = j.at("day_mask").get<std::vector<bool>>();
      if (mask.size() != 7) throw Error(Errc::parse_error, "day_mask needs 7 entries, Monday first");
      for (int d = 0; d < 7; ++d) spec.day_mask[d] = mask[d];
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("mixture spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

struct SampleOptions {
  double period_minutes = 5.0;
  DateTime start{};  // local midnight of the first day, as UTC
  int local_offset_minutes = 0;
  double voltage = 208.0;
  BatteryProfile battery;
  double battery_capacity_kwh = 0.0;
  std::string station_id;  // empty: let a stochastic network assign spaces
};

inline constexpr int kMaxRedraws = 100;

/// Draws (arrival hour, sojourn hours, energy kWh) per session. Draws with an arrival
/// outside the day, a non-positive sojourn or non-positive energy are redrawn.
inline EventQueue sample_events(const MixtureSpec& spec, int days, std::uint64_t seed, const SampleOptions& options) {
  spec.validate();
  if (days < 0) throw Error(Errc::invalid_argument, "negative day count");
  if (!(options.period_minutes > 0.0)) throw Error(Errc::nonpositive_argument, "period length must be positive");
  std::mt19937_64 rng(seed);
  std::vector<double> weights;
  std::vector<Eigen::Matrix3d> factors;
  for (const auto& c : spec.components) {
    weights.push_back(c.weight);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(c.covariance);
    const Eigen::Vector3d root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    factors.push_back(eig.eigenvectors() * root.asDiagonal());
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);

  EventQueue queue;
  using namespace std::chrono;
  const auto local_day0 = floor<std::chrono::days>(options.start + minutes(options.local_offset_minutes));
  for (int d = 0; d < days; ++d) {
    const auto local_day = local_day0 + std::chrono::days(d);
    const unsigned wd = weekday(local_day).iso_encoding();  // Monday = 1
    if (!spec.day_mask[wd - 1]) continue;
    std::size_t count = 0;
    if (spec.arrivals.kind == ArrivalsPerDay::Kind::fixed) {
      count = static_cast<std::size_t>(std::llround(spec.arrivals.value));
    } else {
      std::poisson_distribution<long long> pois(spec.arrivals.value);
      count = static_cast<std::size_t>(pois(rng));
    }
    const DateTime midnight = time_point_cast<seconds>(sys_days(local_day) - minutes(options.local_offset_minutes));
    for (std::size_t k = 0; k < count; ++k) {
      Eigen::Vector3d draw;
      bool ok = false;
      for (int attempt = 0; attempt <= kMaxRedraws && !ok; ++attempt) {
        const std::size_t c = pick(rng);
        Eigen::Vector3d z(normal(rng), normal(rng), normal(rng));
        draw = spec.components[c].mean + factors[c] * z;
        ok = draw[0] >= 0.0 && draw[0] < 24.0 && draw[1] > 0.0 && draw[2] > 0.0;
      }
      if (!ok) {
        throw Error(Errc::rejection_budget_exhausted,
                    "no valid draw after " + std::to_string(kMaxRedraws) + " redraws (day " + std::to_string(d) + ")");
      }
      const double arrive_s = draw[0] * 3600.0;
      const double leave_s = arrive_s + draw[1] * 3600.0;
      const double offset_s = duration<double>(midnight - options.start).count();
      const double period_s = options.period_minutes * 60.0;
      const auto arrival = static_cast<Period>(std::floor((offset_s + arrive_s) / period_s));
      auto departure = static_cast<Period>(std::ceil((offset_s + leave_s) / period_s));
      if (arrival < 0) continue;
      departure = std::max(departure, arrival + 1);
      BatteryProfile profile = options.battery;
      profile.capacity = options.battery_capacity_kwh > 0.0
                             ? kwh_to_amp_periods(options.battery_capacity_kwh, options.voltage, options.period_minutes)
                             : 0.0;
      const std::string id = "gmm-" + std::to_string(d) + "-" + std::to_string(k);
      SessionEV ev = make_session(id, options.station_id, arrival, departure, departure,
                                  kwh_to_amp_periods(draw[2], options.voltage, options.period_minutes), profile);
      ev.estimate_is_truth = true;
      queue.enqueue(make_plugin(arrival, std::move(ev)));
      queue.enqueue(make_unplug(departure, id));
    }
  }
  return queue;
}

}  // namespace acnsim

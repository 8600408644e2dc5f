#pragma once

// Scenario documents: one JSON file naming the network, events, tariff, signals and
// algorithm. Relative paths resolve against the document's directory.

#include <acnsim/algorithms.hpp>
#include <acnsim/common.hpp>
#include <acnsim/engine.hpp>
#include <acnsim/events.hpp>
#include <acnsim/metrics.hpp>
#include <acnsim/mpc.hpp>
#include <acnsim/network.hpp>
#include <acnsim/sessions.hpp>
#include <acnsim/signals.hpp>

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace acnsim {

namespace fs = std::filesystem;

struct AlgorithmSpec {
  std::string name = "uncontrolled";
  MpcOptions mpc;
};

inline AlgorithmSpec algorithm_from_json(const nlohmann::json& j) {
  AlgorithmSpec spec;
  if (j.is_string()) {
    spec.name = j.get<std::string>();
  } else {
    spec.name = j.at("name").get<std::string>();
    if (j.contains("terms")) {
      spec.mpc.terms.clear();
      for (const auto& t : j.at("terms")) spec.mpc.terms.push_back(objective_term_from_json(t));
    }
    spec.mpc.polygon_sides = j.value("polygon_sides", 12);
    if (j.contains("horizon_cap")) spec.mpc.horizon_cap = j.at("horizon_cap").get<Period>();
    spec.mpc.solver.tolerance = j.value("tolerance", spec.mpc.solver.tolerance);
    spec.mpc.solver.max_iterations = j.value("max_iterations", spec.mpc.solver.max_iterations);
  }
  static const std::vector<std::string> known{"uncontrolled", "round_robin", "fcfs", "lcfs", "edf", "lrpt", "llf", "mpc"};
  if (std::find(known.begin(), known.end(), spec.name) == known.end()) {
    throw Error(Errc::invalid_argument, "unknown algorithm '" + spec.name + "'");
  }
  return spec;
}

inline std::shared_ptr<Algorithm> make_algorithm(const AlgorithmSpec& spec) {
  if (spec.name == "uncontrolled") return std::make_shared<Uncontrolled>();
  if (spec.name == "round_robin") return std::make_shared<RoundRobin>();
  if (spec.name == "mpc") return std::make_shared<MpcScheduler>(spec.mpc);
  return std::make_shared<SortedSchedule>(sort_key_from_string(spec.name));
}

struct AutoNetworkSpec {
  std::vector<std::string> stations;
  double transformer_kw = 0.0;
  Phasing phasing = Phasing::single;
  double voltage = 208.0;
  PilotModel pilot = PilotModel::continuous(32.0);
};

struct SweepSpec {
  std::vector<AlgorithmSpec> algorithms;
  std::vector<double> capacities_kw;
  bool offline = true;
};

struct Scenario {
  std::string name;
  SimConfig config;
  std::optional<Infrastructure> infrastructure;  // from a network file
  std::optional<AutoNetworkSpec> auto_network;
  AssignmentMode mode = AssignmentMode::deterministic;
  bool early_departure = false;
  EventQueue events;
  SimSignals signals;
  AlgorithmSpec algorithm;
  std::optional<SweepSpec> sweep;
  std::uint64_t seed = 0;
  std::vector<std::string> load_log;

  /// The physical network; `capacity_kw` rebuilds an auto network at another transformer size.
  Infrastructure build_infrastructure(std::optional<double> capacity_kw = std::nullopt) const {
    if (auto_network) {
      const auto& a = *auto_network;
      return build_auto_infrastructure(a.stations, capacity_kw.value_or(a.transformer_kw), a.phasing, a.voltage, a.pilot);
    }
    if (!infrastructure) throw Error(Errc::invalid_argument, "scenario has no network");
    if (capacity_kw) {
      std::vector<std::string> ids;
      for (const auto& e : infrastructure->evses()) ids.push_back(e.station_id);
      const auto& first = infrastructure->evses().front();
      return build_auto_infrastructure(ids, *capacity_kw, Phasing::single, first.voltage, first.pilot);
    }
    return *infrastructure;
  }
};

namespace detail {

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, path.string() + ": " + e.what());
  }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline PilotModel pilot_or_default(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? pilot_from_json(j.at(key)) : PilotModel::continuous(32.0);
}

inline Phasing phasing_from_string(const std::string& s) {
  if (s == "single") return Phasing::single;
  if (s == "three") return Phasing::three;
  throw Error(Errc::parse_error, "phasing must be single or three");
}

inline BatteryKind battery_kind_from_string(const std::string& s) {
  if (s == "ideal") return BatteryKind::ideal;
  if (s == "two_stage") return BatteryKind::two_stage;
  throw Error(Errc::parse_error, "battery kind must be ideal or two_stage");
}

inline std::vector<std::string> station_list(const nlohmann::json& a) {
  if (a.contains("stations")) return a.at("stations").get<std::vector<std::string>>();
  const int count = a.at("count").get<int>();
  const std::string prefix = a.value("prefix", std::string("EVSE-"));
  std::vector<std::string> ids;
  for (int i = 1; i <= count; ++i) {
    std::string n = std::to_string(i);
    if (n.size() < 2) n = "0" + n;
    ids.push_back(prefix + n);
  }
  return ids;
}

inline TimeSeriesSignal load_signal(const fs::path& base, const std::string& file, int offset) {
  const fs::path path = resolve(base, file);
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  return read_signal_csv(in, offset);
}

}  // namespace detail

/// Parse a scenario document. `seed_override` replaces the document's seed.
inline Scenario load_scenario(const nlohmann::json& doc, const fs::path& base_dir,
                              std::optional<std::uint64_t> seed_override = std::nullopt) {
  Scenario sc;
  try {
    sc.name = doc.value("name", std::string("scenario"));
    sc.seed = seed_override.value_or(doc.value("seed", std::uint64_t{0}));
    auto& cfg = sc.config;
    cfg.period_minutes = doc.value("period_minutes", 5.0);
    cfg.local_offset_minutes = doc.value("local_offset_minutes", 0);
    cfg.start = parse_datetime(doc.value("start", std::string("2019-03-04T00:00")), cfg.local_offset_minutes);
    cfg.voltage = doc.value("voltage", 208.0);
    if (doc.contains("horizon")) cfg.horizon = doc.at("horizon").get<Period>();
    if (doc.contains("recompute_period")) cfg.recompute_period = doc.at("recompute_period").get<Period>();
    cfg.validate();

    const auto& net = doc.at("network");
    if (net.contains("file")) {
      sc.infrastructure = infrastructure_from_json(detail::read_json(detail::resolve(base_dir, net.at("file"))));
    } else {
      const auto& a = net.at("auto");
      AutoNetworkSpec spec;
      spec.stations = detail::station_list(a);
      spec.transformer_kw = a.at("transformer_kw").get<double>();
      spec.phasing = detail::phasing_from_string(a.value("phasing", std::string("single")));
      spec.voltage = a.value("voltage", cfg.voltage);
      spec.pilot = detail::pilot_or_default(a, "pilot");
      sc.auto_network = spec;
    }
    const std::string mode = net.value("assignment", std::string("deterministic"));
    if (mode == "stochastic") {
      sc.mode = AssignmentMode::stochastic;
    } else if (mode != "deterministic") {
      throw Error(Errc::parse_error, "assignment must be deterministic or stochastic");
    }
    sc.early_departure = net.value("early_departure", false);
    const Infrastructure infra = sc.build_infrastructure();

    BatteryProfile battery;
    double capacity_kwh = 0.0;
    if (doc.contains("battery")) {
      const auto& b = doc.at("battery");
      battery.kind = detail::battery_kind_from_string(b.value("kind", std::string("ideal")));
      battery.max_rate = b.value("max_rate", 32.0);
      battery.threshold = b.value("threshold", 0.8);
      capacity_kwh = b.value("capacity_kwh", 0.0);
    }

    // Energy conversions use the EVSE voltage when known; stochastic sessions have no
    // station yet, so they use a common EVSE voltage if there is one.
    std::optional<double> common_voltage = infra.evses().empty() ? std::nullopt
                                                                  : std::optional<double>(infra.evses()[0].voltage);
    for (const auto& e : infra.evses()) {
      if (common_voltage && e.voltage != *common_voltage) common_voltage.reset();
    }

    const auto& ev = doc.at("events");
    if (ev.contains("sessions_file")) {
      IngestOptions opt;
      opt.period_minutes = cfg.period_minutes;
      opt.start = cfg.start;
      opt.local_offset_minutes = cfg.local_offset_minutes;
      opt.voltage = common_voltage.value_or(cfg.voltage);
      opt.station_voltage = [infra](const std::string& id) -> std::optional<double> {
        if (auto i = infra.index_of(id)) return infra.evses()[*i].voltage;
        return std::nullopt;
      };
      opt.battery = battery;
      opt.battery_capacity_kwh = capacity_kwh;
      opt.use_user_request = ev.value("use_user_request", false);
      opt.estimate_noise_periods = ev.value("estimate_noise_periods", 0.0);
      opt.seed = sc.seed;
      if (ev.contains("field_names")) opt.field_names = ev.at("field_names").get<std::map<std::string, std::string>>();
      IngestResult res = sessions_to_events(detail::read_json(detail::resolve(base_dir, ev.at("sessions_file"))), opt);
      sc.events = std::move(res.events);
      sc.load_log = std::move(res.log);
    } else if (ev.contains("event_log")) {
      const fs::path path = detail::resolve(base_dir, ev.at("event_log"));
      std::ifstream in(path);
      if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
      sc.events = read_event_log(in);
    } else {
      const MixtureSpec spec = ev.contains("mixture_file")
                                   ? mixture_from_json(detail::read_json(detail::resolve(base_dir, ev.at("mixture_file"))))
                                   : mixture_from_json(ev.at("mixture"));
      SampleOptions opt;
      opt.period_minutes = cfg.period_minutes;
      opt.start = cfg.start;
      opt.local_offset_minutes = cfg.local_offset_minutes;
      opt.voltage = common_voltage.value_or(cfg.voltage);
      opt.battery = battery;
      opt.battery_capacity_kwh = capacity_kwh;
      if (sc.mode == AssignmentMode::deterministic) {
        throw Error(Errc::invalid_argument, "sampled sessions carry no station; use stochastic assignment");
      }
      sc.events = sample_events(spec, ev.value("days", 1), sc.seed, opt);
    }

    if (doc.contains("tariff")) {
      const auto& t = doc.at("tariff");
      if (t.is_string()) {
        auto builtin = builtin_tariff(t.get<std::string>());
        if (!builtin) throw Error(Errc::invalid_argument, "unknown built-in tariff '" + t.get<std::string>() + "'");
        sc.signals.tariff = *builtin;
      } else {
        sc.signals.tariff = tariff_from_json(detail::read_json(detail::resolve(base_dir, t.at("file"))));
      }
      validate_tariff(*sc.signals.tariff);
    }
    if (doc.contains("external_load")) {
      sc.signals.external_load = detail::load_signal(base_dir, doc.at("external_load"), cfg.local_offset_minutes);
    }
    if (doc.contains("solar")) sc.signals.solar = detail::load_signal(base_dir, doc.at("solar"), cfg.local_offset_minutes);

    if (doc.contains("algorithm")) sc.algorithm = algorithm_from_json(doc.at("algorithm"));
    if (doc.contains("sweep")) {
      const auto& s = doc.at("sweep");
      SweepSpec sweep;
      for (const auto& a : s.at("algorithms")) sweep.algorithms.push_back(algorithm_from_json(a));
      sweep.capacities_kw = s.at("capacities_kw").get<std::vector<double>>();
      sweep.offline = s.value("offline", true);
      sc.sweep = std::move(sweep);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("scenario: ") + e.what());
  }
  return sc;
}

inline Scenario load_scenario_file(const fs::path& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  return load_scenario(detail::read_json(path), path.parent_path(), seed_override);
}

inline SimRecord run_scenario(const Scenario& sc, std::optional<double> capacity_kw = std::nullopt,
                              const AlgorithmSpec* algorithm = nullptr) {
  Network network(sc.build_infrastructure(capacity_kw), sc.mode, sc.early_departure);
  Simulator sim(sc.config, std::move(network), sc.events, make_algorithm(algorithm ? *algorithm : sc.algorithm),
                sc.signals);
  return sim.run();
}

// ---------------------------------------------------------------------------
// Capacity sweep

struct SweepRow {
  std::string algorithm;
  double capacity_kw = 0.0;
  MetricsReport metrics;
};

/// One run per (algorithm, capacity) plus the offline benchmark per capacity when the
/// events carry station assignments. Rows come back sorted by algorithm then capacity.
inline std::vector<SweepRow> capacity_sweep(const Scenario& sc, const std::vector<AlgorithmSpec>& algorithms,
                                            const std::vector<double>& capacities, bool offline = true,
                                            unsigned jobs = 1) {
  struct Task {
    const AlgorithmSpec* algorithm;  // null for the offline benchmark
    double capacity;
  };
  std::vector<Task> tasks;
  for (const auto& a : algorithms) {
    for (double c : capacities) tasks.push_back({&a, c});
  }
  if (offline && sc.mode == AssignmentMode::deterministic) {
    for (double c : capacities) tasks.push_back({nullptr, c});
  }
  const Tariff* tariff = sc.signals.tariff ? &*sc.signals.tariff : nullptr;
  std::vector<SweepRow> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= tasks.size()) return;
      try {
        const Task& task = tasks[k];
        SweepRow row;
        row.capacity_kw = task.capacity;
        if (task.algorithm) {
          row.algorithm = task.algorithm->name;
          row.metrics = compute_metrics(run_scenario(sc, task.capacity, task.algorithm), tariff);
        } else {
          row.algorithm = "offline";
          const OfflineResult best = offline_optimal(sc.events, sc.build_infrastructure(task.capacity), sc.config.horizon);
          row.metrics.deliverable = best.requested;
          row.metrics.delivered = std::min(best.energy, best.requested);
          if (best.requested > 0.0) row.metrics.demand_met = std::clamp(best.energy / best.requested, 0.0, 1.0);
          const Infrastructure infra = sc.build_infrastructure(task.capacity);
          std::vector<double> kw(static_cast<std::size_t>(best.horizon), 0.0);
          for (std::size_t s = 0; s < best.program.sessions.size(); ++s) {
            const double volts = infra.evses()[best.program.sessions[s].evse].voltage;
            for (Period t = 0; t < best.horizon; ++t) {
              kw[static_cast<std::size_t>(t)] += std::max(best.solution.rate(best.program, s, t), 0.0) * volts / 1000.0;
            }
          }
          for (double p : kw) row.metrics.delivered_kwh += p * sc.config.period_minutes / 60.0;
          if (!kw.empty()) row.metrics.peak_kw = *std::max_element(kw.begin(), kw.end());
        }
        rows[k] = std::move(row);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(tasks.size(), 1))));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.algorithm != b.algorithm) return a.algorithm < b.algorithm;
    return a.capacity_kw < b.capacity_kw;
  });
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "algorithm,capacity_kw,demand_met,delivered_kwh,swaps,peak_kw,violation_periods,max_overload_amps,"
         "total_cost,cost_per_kwh\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.algorithm << ',' << format_number(r.capacity_kw) << ','
        << (m.demand_met ? format_number(*m.demand_met) : std::string()) << ',' << format_number(m.delivered_kwh)
        << ',' << m.swaps << ',' << format_number(m.peak_kw) << ',' << m.violation_periods << ','
        << format_number(m.max_overload) << ',' << (m.billing ? format_number(m.billing->total) : std::string())
        << ',' << (m.billing && m.billing->per_kwh ? format_number(*m.billing->per_kwh) : std::string()) << '\n';
  }
}

}  // namespace acnsim

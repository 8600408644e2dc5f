// acnsim: run, sweep, export and validate charging scenarios.

#include <acnsim/acnsim.hpp>

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace acnsim;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  return out;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(Errc::parse_error, "bad capacity '" + item + "'");
    }
  }
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const fs::path& out_dir,
            const std::string& algorithm) {
  Scenario sc = load_scenario_file(config, seed);
  if (!algorithm.empty()) sc.algorithm = algorithm_from_json(nlohmann::json(algorithm));
  for (const auto& line : sc.load_log) warn(line);
  fs::create_directories(out_dir);
  {
    auto log = open_output(out_dir / "events.jsonl");
    write_event_log(log, sc.events);
  }
  const SimRecord record = run_scenario(sc);
  const MetricsReport metrics = compute_metrics(record, sc.signals.tariff ? &*sc.signals.tariff : nullptr);
  {
    auto csv = open_output(out_dir / "record.csv");
    write_record_csv(csv, record);
  }
  nlohmann::json summary = record_summary_json(record);
  summary["scenario"] = sc.name;
  summary["seed"] = sc.seed;
  summary["metrics"] = metrics_to_json(metrics);
  {
    auto js = open_output(out_dir / "summary.json");
    js << summary.dump(2) << '\n';
  }
  std::cout << metrics_to_json(metrics).dump(2) << '\n';
  return 0;
}

int cmd_sweep(const std::string& config, std::optional<std::uint64_t> seed, const fs::path& out_dir,
              const std::string& algorithms, const std::string& capacities, unsigned jobs) {
  const Scenario sc = load_scenario_file(config, seed);
  SweepSpec spec = sc.sweep.value_or(SweepSpec{});
  if (!algorithms.empty()) {
    spec.algorithms.clear();
    for (const auto& name : split_names(algorithms)) spec.algorithms.push_back(algorithm_from_json(nlohmann::json(name)));
  }
  if (!capacities.empty()) spec.capacities_kw = parse_list(capacities);
  if (spec.algorithms.empty()) spec.algorithms.push_back(sc.algorithm);
  if (spec.capacities_kw.empty()) throw Error(Errc::invalid_argument, "sweep needs --capacity-list or sweep.capacities_kw");
  const auto rows = capacity_sweep(sc, spec.algorithms, spec.capacities_kw, spec.offline, jobs);
  fs::create_directories(out_dir);
  auto csv = open_output(out_dir / "sweep.csv");
  write_sweep_csv(csv, rows);
  write_sweep_csv(std::cout, rows);
  return 0;
}

int cmd_export(const fs::path& input, const fs::path& out_dir, bool phases) {
  std::ifstream csv(input / "record.csv");
  if (!csv) throw Error(Errc::io_error, "cannot open " + (input / "record.csv").string());
  const nlohmann::json summary = detail::read_json(input / "summary.json");
  const SimRecord record = read_record(csv, summary);
  fs::create_directories(out_dir);
  auto out = open_output(out_dir / "load_profile.csv");
  export_load_profile(out, record, phases);
  return 0;
}

int cmd_validate(const std::vector<std::string>& configs) {
  for (const auto& path : configs) {
    const Scenario sc = load_scenario_file(path);
    std::cout << path << ": ok (" << sc.events.size() << " events, " << sc.build_infrastructure().size()
              << " EVSEs)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EV charging network simulator"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string algorithm;
  std::string capacities;
  unsigned jobs = 1;
  std::string input;
  bool phases = false;
  std::vector<std::string> validate_configs;

  auto* run = app.add_subcommand("run", "simulate one scenario");
  run->add_option("--config", config, "scenario JSON")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--out-dir", out_dir, "output directory");
  run->add_option("--algorithm", algorithm, "override the scenario algorithm");

  auto* sweep = app.add_subcommand("sweep", "demand met across transformer capacities");
  sweep->add_option("--config", config, "scenario JSON")->required();
  sweep->add_option("--seed", seed, "override the scenario seed");
  sweep->add_option("--out-dir", out_dir, "output directory");
  sweep->add_option("--algorithm", algorithm, "comma-separated algorithm names");
  sweep->add_option("--capacity-list", capacities, "comma-separated capacities in kW");
  sweep->add_option("--jobs", jobs, "parallel simulations")->check(CLI::PositiveNumber);

  auto* exp = app.add_subcommand("export", "load profile from a run directory");
  exp->add_option("--input", input, "directory written by run")->required();
  exp->add_option("--out-dir", out_dir, "output directory");
  exp->add_flag("--phases", phases, "add per-phase columns");

  auto* val = app.add_subcommand("validate", "check scenario documents and the files they reference");
  val->add_option("--config", validate_configs, "scenario JSON (repeatable)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config, seed, out_dir, algorithm);
    if (sweep->parsed()) return cmd_sweep(config, seed, out_dir, algorithm, capacities, jobs);
    if (exp->parsed()) return cmd_export(input, out_dir, phases);
    if (val->parsed()) return cmd_validate(validate_configs);
  } catch (const Error& e) {
    std::cerr << "acnsim: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "acnsim: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

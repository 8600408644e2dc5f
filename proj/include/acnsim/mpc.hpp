#pragma once

// Receding-horizon scheduler on a linearized convex program, and the offline benchmark
// that solves one program over the whole event list.

#include <acnsim/algorithms.hpp>
#include <acnsim/engine.hpp>
#include <acnsim/events.hpp>
#include <acnsim/network.hpp>
#include <acnsim/pdhg.hpp>

#include "json.hpp"

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace acnsim {

struct ObjectiveTerm {
  enum class Kind { quick_charge, energy_cost, demand_charge, load_flatten, equal_share };

  Kind kind = Kind::quick_charge;
  double weight = 1.0;
  double epsilon = 1e-3;              // equal_share
  std::optional<double> demand_rate;  // $/kW; defaults to the tariff's demand charge

  static ObjectiveTerm quick_charge(double w = 1.0) { return {Kind::quick_charge, w, 1e-3, std::nullopt}; }
  static ObjectiveTerm energy_cost(double w = 1.0) { return {Kind::energy_cost, w, 1e-3, std::nullopt}; }
  static ObjectiveTerm demand_charge(double w = 1.0, std::optional<double> rate = std::nullopt) {
    return {Kind::demand_charge, w, 1e-3, rate};
  }
  static ObjectiveTerm load_flatten(double w = 1.0) { return {Kind::load_flatten, w, 1e-3, std::nullopt}; }
  static ObjectiveTerm equal_share(double epsilon, double w = 1.0) { return {Kind::equal_share, w, epsilon, std::nullopt}; }
};

inline std::string to_string(ObjectiveTerm::Kind kind) {
  switch (kind) {
    case ObjectiveTerm::Kind::quick_charge: return "quick_charge";
    case ObjectiveTerm::Kind::energy_cost: return "energy_cost";
    case ObjectiveTerm::Kind::demand_charge: return "demand_charge";
    case ObjectiveTerm::Kind::load_flatten: return "load_flatten";
    case ObjectiveTerm::Kind::equal_share: return "equal_share";
  }
  return "quick_charge";
}

inline ObjectiveTerm objective_term_from_json(const nlohmann::json& j) {
  ObjectiveTerm t;
  const std::string kind = j.at("kind").get<std::string>();
  bool known = false;
  for (auto k : {ObjectiveTerm::Kind::quick_charge, ObjectiveTerm::Kind::energy_cost,
                 ObjectiveTerm::Kind::demand_charge, ObjectiveTerm::Kind::load_flatten,
                 ObjectiveTerm::Kind::equal_share}) {
    if (to_string(k) == kind) {
      t.kind = k;
      known = true;
    }
  }
  if (!known) throw Error(Errc::unknown_term, "unknown objective term '" + kind + "'");
  t.weight = j.value("weight", 1.0);
  t.epsilon = j.value("epsilon", 1e-3);
  if (j.contains("demand_rate")) t.demand_rate = j.at("demand_rate").get<double>();
  if (t.kind == ObjectiveTerm::Kind::equal_share && !(t.epsilon > 0.0)) {
    throw Error(Errc::invalid_argument, "equal_share needs epsilon > 0");
  }
  return t;
}

inline nlohmann::json objective_term_to_json(const ObjectiveTerm& t) {
  nlohmann::json j{{"kind", to_string(t.kind)}, {"weight", t.weight}};
  if (t.kind == ObjectiveTerm::Kind::equal_share) j["epsilon"] = t.epsilon;
  if (t.demand_rate) j["demand_rate"] = *t.demand_rate;
  return j;
}

// ---------------------------------------------------------------------------
// Constraint linearization

struct LinearRow {
  std::vector<std::pair<std::size_t, double>> coefficients;  // evse index -> coefficient
  double rhs = 0.0;
};

/// m half-planes Re(z e^{-j theta_k}) <= R cos(pi/m), theta_k = 2 pi k / m: the regular
/// polygon inscribed in |z| <= R, so every point satisfying the rows is truly feasible.
/// `rhs_factor` overrides cos(pi/m); 1 gives the circumscribed (outer) polygon.
inline std::vector<LinearRow> linearize_magnitude(const Infrastructure& infra, std::size_t constraint, int m,
                                                  std::optional<double> rhs_factor = std::nullopt) {
  if (m < 3) throw Error(Errc::invalid_argument, "polygon needs at least 3 sides");
  const auto& terms = infra.terms(constraint);
  const double limit = infra.constraints()[constraint].limit;
  const double factor = rhs_factor.value_or(std::cos(std::numbers::pi / m));
  std::vector<LinearRow> rows;
  for (int k = 0; k < m; ++k) {
    const double theta = 2.0 * std::numbers::pi * k / m;
    const std::complex<double> rot = std::polar(1.0, -theta);
    LinearRow row;
    row.rhs = limit * factor;
    for (const auto& term : terms) {
      const double a = (term.phasor * rot).real();
      // Rotation leaves ~1e-17 where the projection is exactly zero.
      if (std::abs(a) > 1e-12 * std::abs(term.phasor)) row.coefficients.emplace_back(term.evse, a);
    }
    if (!row.coefficients.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

/// Rows used by the program builder. Phase-agnostic or collinear constraints reduce to
/// |sum a_i r_i| <= R exactly; the rest use the polygon.
inline std::vector<LinearRow> constraint_rows(const Infrastructure& infra, std::size_t constraint, int m,
                                              bool outer = false) {
  const auto& terms = infra.terms(constraint);
  const double limit = infra.constraints()[constraint].limit;
  if (terms.empty()) return {};
  std::complex<double> ref{};
  for (const auto& t : terms) {
    if (std::abs(t.phasor) > std::abs(ref)) ref = t.phasor;
  }
  bool collinear = std::abs(ref) > 0.0;
  const std::complex<double> dir = collinear ? ref / std::abs(ref) : std::complex<double>(1.0, 0.0);
  for (const auto& t : terms) {
    if (std::abs((t.phasor * std::conj(dir)).imag()) > 1e-9 * std::max(1.0, std::abs(t.phasor))) collinear = false;
  }
  if (!collinear) return linearize_magnitude(infra, constraint, m, outer ? std::optional<double>(1.0) : std::nullopt);
  LinearRow up, down;
  up.rhs = down.rhs = limit;
  bool any_negative = false;
  for (const auto& t : terms) {
    const double a = (t.phasor * std::conj(dir)).real();
    if (a == 0.0) continue;
    any_negative = any_negative || a < 0.0;
    up.coefficients.emplace_back(t.evse, a);
    down.coefficients.emplace_back(t.evse, -a);
  }
  std::vector<LinearRow> rows{std::move(up)};
  // With r >= 0 the lower side only binds when some coefficient is negative.
  if (any_negative) rows.push_back(std::move(down));
  return rows;
}

// ---------------------------------------------------------------------------
// Program

struct ProgramSession {
  std::string session_id;
  std::string station_id;
  std::size_t evse = 0;
  Period window_start = 0;  // relative to the program's first period
  Period window_end = 0;    // exclusive
  double demand = 0.0;      // energy cap, A*periods
  double max_rate = 0.0;    // amps
};

struct ProgramInput {
  const Infrastructure* infrastructure = nullptr;
  std::vector<ProgramSession> sessions;
  Period horizon = 1;
  double period_minutes = 5.0;
  double peak_so_far_kw = 0.0;
  std::function<double(Period)> price;          // $/kWh at relative period t
  std::function<double(Period)> external_load;  // kW
  std::function<double(Period)> solar;          // kW
  std::optional<double> tariff_demand_rate;     // $/kW
  int polygon_sides = 12;
  bool outer_polygon = false;
};

struct ConvexProgram {
  std::vector<ProgramSession> sessions;
  Period horizon = 0;
  QpProblem qp;                 // minimization form of the weighted objective
  double objective_constant = 0.0;
  std::optional<Eigen::Index> peak_variable;
  bool energy_first = false;    // maximize delivered energy before the weighted terms

  Eigen::Index session_variables() const { return static_cast<Eigen::Index>(sessions.size()) * horizon; }
  Eigen::Index index(std::size_t session, Period t) const {
    return static_cast<Eigen::Index>(session) * horizon + t;
  }

  /// Value of the maximized objective at x.
  double objective(const Eigen::VectorXd& x) const { return -qp.objective(x) - objective_constant; }
};

inline ConvexProgram build_program(const ProgramInput& in, const std::vector<ObjectiveTerm>& terms) {
  if (in.horizon < 1) throw Error(Errc::invalid_argument, "horizon must be at least one period");
  if (!in.infrastructure) throw Error(Errc::invalid_argument, "program needs an infrastructure");
  const Infrastructure& infra = *in.infrastructure;
  ConvexProgram prog;
  prog.sessions = in.sessions;
  prog.horizon = in.horizon;
  const Period H = in.horizon;
  const std::size_t S = in.sessions.size();
  const bool wants_peak = std::any_of(terms.begin(), terms.end(), [](const ObjectiveTerm& t) {
    return t.kind == ObjectiveTerm::Kind::demand_charge;
  });
  const Eigen::Index nr = static_cast<Eigen::Index>(S) * H;
  const Eigen::Index n = nr + (wants_peak && S > 0 ? 1 : 0);
  if (n > nr) prog.peak_variable = nr;

  Eigen::VectorXd lower = Eigen::VectorXd::Zero(n), upper = Eigen::VectorXd::Zero(n);
  std::vector<double> kw_per_amp(S);
  for (std::size_t i = 0; i < S; ++i) {
    const auto& s = in.sessions[i];
    kw_per_amp[i] = infra.evses()[s.evse].voltage / 1000.0;
    for (Period t = std::max<Period>(s.window_start, 0); t < std::min(s.window_end, H); ++t) {
      upper[prog.index(i, t)] = std::max(s.max_rate, 0.0);
    }
  }
  if (prog.peak_variable) {
    double total = 0.0;
    for (std::size_t i = 0; i < S; ++i) total += kw_per_amp[i] * in.sessions[i].max_rate;
    upper[*prog.peak_variable] = std::max(total, 0.0);
  }

  std::vector<Eigen::Triplet<double>> rows;
  std::vector<double> rhs;
  auto add_row = [&](const std::vector<std::pair<Eigen::Index, double>>& coefs, double b) {
    const auto r = static_cast<Eigen::Index>(rhs.size());
    for (const auto& [j, a] : coefs) rows.emplace_back(r, j, a);
    rhs.push_back(b);
  };

  // Energy caps.
  for (std::size_t i = 0; i < S; ++i) {
    std::vector<std::pair<Eigen::Index, double>> coefs;
    for (Period t = 0; t < H; ++t) coefs.emplace_back(prog.index(i, t), 1.0);
    add_row(coefs, std::max(in.sessions[i].demand, 0.0));
  }
  // Network rows per period. Sessions sharing an EVSE (offline) share its coefficient.
  std::vector<std::vector<std::size_t>> by_evse(infra.size());
  for (std::size_t i = 0; i < S; ++i) by_evse[in.sessions[i].evse].push_back(i);
  for (std::size_t j = 0; j < infra.constraints().size(); ++j) {
    const auto lin = constraint_rows(infra, j, in.polygon_sides, in.outer_polygon);
    for (const auto& row : lin) {
      for (Period t = 0; t < H; ++t) {
        std::vector<std::pair<Eigen::Index, double>> coefs;
        for (const auto& [evse, a] : row.coefficients) {
          for (std::size_t i : by_evse[evse]) {
            if (upper[prog.index(i, t)] > 0.0) coefs.emplace_back(prog.index(i, t), a);
          }
        }
        if (!coefs.empty()) add_row(coefs, row.rhs);
      }
    }
  }

  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);  // minimization
  std::vector<Eigen::Triplet<double>> quad;
  const double kwh_per_amp_period = in.period_minutes / 60.0;  // times kW per amp
  for (const auto& term : terms) {
    const double w = term.weight;
    switch (term.kind) {
      case ObjectiveTerm::Kind::quick_charge:
        for (std::size_t i = 0; i < S; ++i) {
          for (Period t = 0; t < H; ++t) c[prog.index(i, t)] -= w * static_cast<double>(H - t) / H;
        }
        break;
      case ObjectiveTerm::Kind::energy_cost:
        prog.energy_first = true;
        for (Period t = 0; t < H; ++t) {
          const double price = in.price ? in.price(t) : 0.0;
          for (std::size_t i = 0; i < S; ++i) c[prog.index(i, t)] += w * price * kw_per_amp[i] * kwh_per_amp_period;
        }
        break;
      case ObjectiveTerm::Kind::demand_charge: {
        prog.energy_first = true;
        if (!prog.peak_variable) break;
        const double rate = term.demand_rate.value_or(in.tariff_demand_rate.value_or(0.0));
        c[*prog.peak_variable] += w * rate;
        for (Period t = 0; t < H; ++t) {
          std::vector<std::pair<Eigen::Index, double>> coefs;
          for (std::size_t i = 0; i < S; ++i) {
            if (upper[prog.index(i, t)] > 0.0) coefs.emplace_back(prog.index(i, t), kw_per_amp[i]);
          }
          if (coefs.empty()) continue;
          coefs.emplace_back(*prog.peak_variable, -1.0);
          add_row(coefs, in.peak_so_far_kw);
        }
        break;
      }
      case ObjectiveTerm::Kind::load_flatten:
        prog.energy_first = true;
        // (L - S + P)^2 = P^2 + 2(L - S)P + const, with P = sum a_i r_i.
        for (Period t = 0; t < H; ++t) {
          const double base = (in.external_load ? in.external_load(t) : 0.0) - (in.solar ? in.solar(t) : 0.0);
          prog.objective_constant += w * base * base;
          for (std::size_t i = 0; i < S; ++i) {
            c[prog.index(i, t)] += w * 2.0 * base * kw_per_amp[i];
            for (std::size_t k = 0; k < S; ++k) {
              quad.emplace_back(prog.index(i, t), prog.index(k, t), w * 2.0 * kw_per_amp[i] * kw_per_amp[k]);
            }
          }
        }
        break;
      case ObjectiveTerm::Kind::equal_share:
        if (!(term.epsilon > 0.0)) throw Error(Errc::invalid_argument, "equal_share needs epsilon > 0");
        prog.energy_first = true;
        for (Eigen::Index v = 0; v < nr; ++v) quad.emplace_back(v, v, w * 2.0 * term.epsilon);
        break;
      default:
        throw Error(Errc::unknown_term, "unknown objective term");
    }
  }

  prog.qp.c = std::move(c);
  prog.qp.Q = SparseMatrix(n, n);
  prog.qp.Q.setFromTriplets(quad.begin(), quad.end());
  prog.qp.K = SparseMatrix(static_cast<Eigen::Index>(rhs.size()), n);
  prog.qp.K.setFromTriplets(rows.begin(), rows.end());
  prog.qp.b = Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
  prog.qp.lower = std::move(lower);
  prog.qp.upper = std::move(upper);
  return prog;
}

struct ProgramSolution {
  Eigen::VectorXd x;
  double objective = 0.0;  // maximized objective value
  double energy = 0.0;     // sum of session rates, A*periods
  double max_violation = 0.0;
  int iterations = 0;
  bool converged = true;

  double rate(const ConvexProgram& p, std::size_t session, Period t) const { return x[p.index(session, t)]; }
};

/// Relative slack kept on delivered energy when a second stage re-optimizes cost terms.
inline constexpr double kEnergySlack = 5e-4;

inline double delivered_energy(const ConvexProgram& p, const Eigen::VectorXd& x) {
  return x.head(p.session_variables()).sum();
}

/// Maximum deliverable energy first when the weighted terms alone would not ask for
/// it, then the weighted objective with energy held within kEnergySlack of that maximum.
inline ProgramSolution solve_program(const ConvexProgram& program, const SolverOptions& options = {}) {
  ProgramSolution sol;
  const Eigen::Index n = program.qp.variables();
  const Eigen::Index nr = program.session_variables();
  if (n == 0) {
    sol.x = Eigen::VectorXd::Zero(0);
    return sol;
  }
  QpProblem qp = program.qp;
  if (program.energy_first) {
    QpProblem stage = program.qp;
    stage.c = Eigen::VectorXd::Zero(n);
    stage.c.head(nr).setConstant(-1.0);
    stage.Q = SparseMatrix(n, n);
    const SolverResult first = solve_qp(stage, options);
    sol.iterations += first.iterations;
    sol.converged = first.converged;
    const double best = std::max(0.0, -first.objective);
    std::vector<Eigen::Triplet<double>> trips;
    for (int k = 0; k < qp.K.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(qp.K, k); it; ++it) trips.emplace_back(it.row(), it.col(), it.value());
    }
    const Eigen::Index r = qp.rows();
    for (Eigen::Index v = 0; v < nr; ++v) trips.emplace_back(r, v, -1.0);
    qp.K = SparseMatrix(r + 1, n);
    qp.K.setFromTriplets(trips.begin(), trips.end());
    qp.b.conservativeResize(r + 1);
    qp.b[r] = -(1.0 - kEnergySlack) * best;
  }
  const SolverResult res = solve_qp(qp, options);
  sol.x = res.x;
  sol.iterations += res.iterations;
  sol.converged = sol.converged && res.converged;
  sol.max_violation = program.qp.max_violation(res.x);
  sol.objective = program.objective(res.x);
  sol.energy = delivered_energy(program, res.x);
  return sol;
}

// ---------------------------------------------------------------------------
// Online scheduler

struct MpcOptions {
  std::vector<ObjectiveTerm> terms{ObjectiveTerm::quick_charge()};
  int polygon_sides = 12;
  std::optional<Period> horizon_cap;
  SolverOptions solver;
};

inline ProgramInput program_input(const AlgoView& view, const MpcOptions& options) {
  ProgramInput in;
  in.infrastructure = view.infrastructure;
  in.period_minutes = view.period_minutes;
  in.peak_so_far_kw = view.peak_so_far_kw;
  in.polygon_sides = options.polygon_sides;
  Period horizon = 1;
  for (const auto& s : view.sessions) {
    ProgramSession ps{s.session_id, s.station_id, s.evse, 0, std::max<Period>(s.estimated_departure - view.now, 1),
                      s.remaining, view.effective_max(s)};
    horizon = std::max(horizon, ps.window_end);
    in.sessions.push_back(std::move(ps));
  }
  if (options.horizon_cap) horizon = std::min(horizon, std::max<Period>(*options.horizon_cap, 1));
  in.horizon = horizon;
  const Period now = view.now;
  in.price = [&view, now](Period t) { return view.price(now + t); };
  in.external_load = [&view, now](Period t) { return view.external_load_kw(now + t); };
  in.solar = [&view, now](Period t) { return view.solar_kw(now + t); };
  if (const Tariff* tf = view.tariff()) in.tariff_demand_rate = tf->demand_charge;
  return in;
}

/// Largest s in [0, 1] with s * rates truly feasible.
inline void scale_to_feasible(const Infrastructure& infra, std::vector<double>& rates) {
  if (infra.feasible(rates)) return;
  double lo = 0.0, hi = 1.0;
  std::vector<double> trial(rates.size());
  for (int k = 0; k < 60; ++k) {
    const double mid = 0.5 * (lo + hi);
    for (std::size_t i = 0; i < rates.size(); ++i) trial[i] = mid * rates[i];
    (infra.feasible(trial) ? lo : hi) = mid;
  }
  for (double& r : rates) r *= lo;
}

class MpcScheduler final : public Algorithm {
 public:
  explicit MpcScheduler(MpcOptions options = {}) : options_(std::move(options)) {
    if (options_.polygon_sides < 3) throw Error(Errc::invalid_argument, "polygon needs at least 3 sides");
  }

  std::string name() const override { return "mpc"; }

  Schedule schedule(const AlgoView& view) override {
    Schedule out;
    if (view.sessions.empty()) return out;
    const ProgramInput in = program_input(view, options_);
    const ConvexProgram prog = build_program(in, options_.terms);
    const ProgramSolution sol = solve_program(prog, options_.solver);
    ++calls_;
    iterations_ += sol.iterations;
    if (!sol.converged) ++nonconverged_;
    max_violation_ = std::max(max_violation_, sol.max_violation);

    const auto& infra = view.infra();
    std::vector<std::size_t> order(view.sessions.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    for (const auto& s : view.sessions) out[s.station_id].assign(static_cast<std::size_t>(prog.horizon), 0.0);
    std::vector<double> column(infra.size());
    for (Period t = 0; t < prog.horizon; ++t) {
      std::fill(column.begin(), column.end(), 0.0);
      for (std::size_t i = 0; i < view.sessions.size(); ++i) {
        column[view.sessions[i].evse] = std::max(sol.rate(prog, i, t), 0.0);
      }
      scale_to_feasible(infra, column);
      for (const auto& s : view.sessions) column[s.evse] = clamp_pilot(view.pilot(s), column[s.evse]);
      repairs_ += detail::repair_quantized(view, order, column);
      for (const auto& s : view.sessions) out[s.station_id][static_cast<std::size_t>(t)] = column[s.evse];
    }
    return out;
  }

  nlohmann::json diagnostics() const override {
    return {{"solver_calls", calls_},
            {"solver_iterations", iterations_},
            {"nonconverged", nonconverged_},
            {"max_row_violation", max_violation_},
            {"quantization_repairs", repairs_}};
  }

  const MpcOptions& options() const { return options_; }

 private:
  MpcOptions options_;
  std::size_t calls_ = 0;
  long long iterations_ = 0;
  std::size_t nonconverged_ = 0;
  double max_violation_ = 0.0;
  std::size_t repairs_ = 0;
};

// ---------------------------------------------------------------------------
// Offline benchmark

struct OfflineResult {
  double energy = 0.0;  // A*periods delivered by the benchmark schedule
  double requested = 0.0;
  Period horizon = 0;
  ProgramSolution solution;
  ConvexProgram program;
};

/// One program over the full event list with actual windows and deliverable demands.
/// Non-collinear constraints use the circumscribed polygon so the value stays an upper
/// bound on anything an online scheduler can deliver under the true constraints.
inline OfflineResult offline_optimal(const EventQueue& events, const Infrastructure& infra,
                                     std::optional<Period> horizon = std::nullopt, int polygon_sides = 12,
                                     const SolverOptions& solver = {}) {
  ProgramInput in;
  in.infrastructure = &infra;
  in.polygon_sides = polygon_sides;
  in.outer_polygon = true;
  Period end = 0;
  for (const auto& e : events.snapshot()) {
    const auto* p = std::get_if<PluginEvent>(&e.payload);
    if (!p) continue;
    const SessionEV& ev = p->session;
    if (ev.station_id.empty()) {
      throw Error(Errc::invalid_argument, "offline benchmark needs station assignments (session " + ev.session_id + ")");
    }
    const std::size_t idx = infra.require_index(ev.station_id);
    ProgramSession ps{ev.session_id, ev.station_id, idx, e.timestamp, ev.departure, ev.deliverable(),
                      std::min(ev.battery.max_rate, infra.evses()[idx].max_rate())};
    if (horizon) ps.window_end = std::min(ps.window_end, *horizon);
    if (ps.window_end <= ps.window_start) continue;
    end = std::max(end, ps.window_end);
    in.sessions.push_back(std::move(ps));
  }
  OfflineResult out;
  for (const auto& s : in.sessions) out.requested += s.demand;
  if (in.sessions.empty()) return out;
  in.horizon = end;
  out.horizon = end;
  // Pure energy maximization: a single LP.
  out.program = build_program(in, {});
  Eigen::VectorXd c = Eigen::VectorXd::Zero(out.program.qp.variables());
  c.head(out.program.session_variables()).setConstant(-1.0);
  out.program.qp.c = c;
  out.solution = solve_program(out.program, solver);
  out.energy = out.solution.energy;
  return out;
}

}  // namespace acnsim

#pragma once

// Primal-dual hybrid gradient for box-bounded convex QPs with inequality rows:
//
//   minimize 0.5 x'Qx + c'x   subject to   Kx <= b,   lower <= x <= upper.
//
// Ruiz equilibration, objective normalization, adaptive restarts on the KKT error and a
// primal-weight update. The stopping test uses the Wolfe dual, which is a valid lower
// bound because every bound is finite.

#include <acnsim/common.hpp>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>

namespace acnsim {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct QpProblem {
  SparseMatrix Q;  // n x n, symmetric PSD; may have no entries
  Eigen::VectorXd c;
  SparseMatrix K;  // rows x n
  Eigen::VectorXd b;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::Index variables() const { return c.size(); }
  Eigen::Index rows() const { return b.size(); }

  double objective(const Eigen::VectorXd& x) const {
    double v = c.dot(x);
    if (Q.nonZeros() > 0) v += 0.5 * x.dot(Q * x);
    return v;
  }

  /// Largest row violation max(0, Kx - b), in the problem's own units.
  double max_violation(const Eigen::VectorXd& x) const {
    if (rows() == 0) return 0.0;
    return std::max(0.0, (K * x - b).maxCoeff());
  }
};

struct SolverOptions {
  double tolerance = 1e-4;  // relative
  int max_iterations = 50000;
  int check_every = 64;
};

struct SolverResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  double objective = 0.0;
  double dual_bound = 0.0;
  double max_violation = 0.0;
  double relative_gap = 0.0;
  double relative_residual = 0.0;
  int iterations = 0;
  int restarts = 0;
  bool converged = false;
};

namespace detail {

inline double spectral_norm(const SparseMatrix& A, int iterations = 200) {
  if (A.nonZeros() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(A.cols()) / std::sqrt(static_cast<double>(A.cols()));
  double lambda = 0.0;
  for (int k = 0; k < iterations; ++k) {
    Eigen::VectorXd w = A.transpose() * (A * v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(norm - lambda) <= 1e-10 * norm) {
      lambda = norm;
      break;
    }
    lambda = norm;
  }
  return std::sqrt(lambda);
}

inline double symmetric_norm(const SparseMatrix& Q, int iterations = 200) {
  if (Q.nonZeros() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(Q.cols()) / std::sqrt(static_cast<double>(Q.cols()));
  double lambda = 0.0;
  for (int k = 0; k < iterations; ++k) {
    Eigen::VectorXd w = Q * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(norm - lambda) <= 1e-10 * norm) {
      lambda = norm;
      break;
    }
    lambda = norm;
  }
  return lambda;
}

struct Scaled {
  QpProblem p;
  Eigen::VectorXd row_scale;  // D_r
  Eigen::VectorXd col_scale;  // D_c, x = D_c * x_scaled
  double objective_scale = 1.0;
};

inline Scaled equilibrate(const QpProblem& in) {
  const Eigen::Index n = in.variables();
  const Eigen::Index m = in.rows();
  Scaled s{in, Eigen::VectorXd::Ones(m), Eigen::VectorXd::Ones(n), 1.0};
  for (int pass = 0; pass < 10; ++pass) {
    Eigen::VectorXd rmax = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd cmax = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < s.p.K.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(s.p.K, k); it; ++it) {
        const double a = std::abs(it.value());
        rmax[it.row()] = std::max(rmax[it.row()], a);
        cmax[it.col()] = std::max(cmax[it.col()], a);
      }
    }
    for (int k = 0; k < s.p.Q.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(s.p.Q, k); it; ++it) {
        cmax[it.col()] = std::max(cmax[it.col()], std::abs(it.value()));
      }
    }
    Eigen::VectorXd dr(m), dc(n);
    for (Eigen::Index i = 0; i < m; ++i) dr[i] = rmax[i] > 0.0 ? 1.0 / std::sqrt(rmax[i]) : 1.0;
    for (Eigen::Index j = 0; j < n; ++j) dc[j] = cmax[j] > 0.0 ? 1.0 / std::sqrt(cmax[j]) : 1.0;
    s.p.K = dr.asDiagonal() * s.p.K * dc.asDiagonal();
    s.p.Q = dc.asDiagonal() * s.p.Q * dc.asDiagonal();
    s.row_scale = s.row_scale.cwiseProduct(dr);
    s.col_scale = s.col_scale.cwiseProduct(dc);
  }
  s.p.b = s.row_scale.cwiseProduct(in.b);
  s.p.c = s.col_scale.cwiseProduct(in.c);
  s.p.lower = in.lower.cwiseQuotient(s.col_scale);
  s.p.upper = in.upper.cwiseQuotient(s.col_scale);
  double scale = s.p.c.size() > 0 ? s.p.c.cwiseAbs().maxCoeff() : 0.0;
  for (int k = 0; k < s.p.Q.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(s.p.Q, k); it; ++it) scale = std::max(scale, std::abs(it.value()));
  }
  if (scale > 0.0) {
    s.objective_scale = scale;
    s.p.c /= scale;
    s.p.Q /= scale;
  }
  return s;
}

struct Kkt {
  double residual = 0.0;  // relative primal infeasibility
  double gap = 0.0;       // relative primal-dual gap
  double primal = 0.0;
  double dual = 0.0;
  double error() const { return std::hypot(residual, gap); }
};

/// `row_scale` maps scaled rows back to the caller's units, where the residual is judged
/// row by row so that equilibration cannot dilute a single violated row.
inline Kkt evaluate(const QpProblem& p, const Eigen::VectorXd& row_scale, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& y, const Eigen::VectorXd& Kx, const Eigen::VectorXd& Kty,
                    const Eigen::VectorXd& Qx) {
  Kkt k;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double v = Kx[i] - p.b[i];
    if (v > 0.0) k.residual = std::max(k.residual, v / (row_scale[i] + std::abs(p.b[i])));
  }
  const double quad = 0.5 * x.dot(Qx);
  k.primal = p.c.dot(x) + quad;
  const Eigen::VectorXd g = Qx + p.c + Kty;
  double box = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) box += g[j] > 0.0 ? g[j] * p.lower[j] : g[j] * p.upper[j];
  k.dual = -quad - (p.rows() > 0 ? p.b.dot(y) : 0.0) + box;
  k.gap = std::abs(k.primal - k.dual) / (1.0 + std::abs(k.primal) + std::abs(k.dual));
  return k;
}

}  // namespace detail

/// Throws infeasible_program when a bound pair or a single row cannot be met at all.
inline void check_program_consistency(const QpProblem& p, double tol = 1e-9) {
  const Eigen::Index n = p.variables();
  if (p.lower.size() != n || p.upper.size() != n || p.K.cols() != n || p.K.rows() != p.rows() ||
      (p.Q.nonZeros() > 0 && (p.Q.rows() != n || p.Q.cols() != n))) {
    throw Error(Errc::invalid_argument, "QP dimensions disagree");
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!std::isfinite(p.lower[j]) || !std::isfinite(p.upper[j])) {
      throw Error(Errc::invalid_argument, "QP bounds must be finite");
    }
    if (p.lower[j] > p.upper[j] + tol) {
      throw Error(Errc::infeasible_program, "variable " + std::to_string(j) + " has lower > upper");
    }
  }
  Eigen::VectorXd least = Eigen::VectorXd::Zero(p.rows());
  for (int k = 0; k < p.K.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(p.K, k); it; ++it) {
      least[it.row()] += it.value() > 0.0 ? it.value() * p.lower[it.col()] : it.value() * p.upper[it.col()];
    }
  }
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (least[i] > p.b[i] + tol * (1.0 + std::abs(p.b[i]))) {
      throw Error(Errc::infeasible_program, "row " + std::to_string(i) + " cannot be satisfied within the bounds");
    }
  }
}

inline SolverResult solve_qp(const QpProblem& problem, const SolverOptions& options = {}) {
  check_program_consistency(problem);
  SolverResult out;
  const Eigen::Index n = problem.variables();
  const Eigen::Index m = problem.rows();
  if (n == 0) {
    out.x = Eigen::VectorXd::Zero(0);
    out.y = Eigen::VectorXd::Zero(m);
    out.converged = true;
    return out;
  }

  const detail::Scaled s = detail::equilibrate(problem);
  const QpProblem& p = s.p;
  const SparseMatrix Kt = p.K.transpose();
  const double knorm = detail::spectral_norm(p.K);
  const double lip = detail::symmetric_norm(p.Q);

  double omega = 1.0;
  if (m > 0 && p.b.norm() > 1e-10 && p.c.norm() > 1e-10) omega = std::clamp(p.c.norm() / p.b.norm(), 1e-4, 1e4);

  double tau = 1.0, sigma = 1.0;
  auto set_steps = [&] {
    if (knorm > 0.0) {
      sigma = 0.9 * omega / knorm;
      tau = 1.0 / (lip + sigma * knorm * knorm / 0.9);
    } else {
      sigma = 1.0;
      tau = lip > 0.0 ? 1.0 / lip : 1.0 + (p.upper - p.lower).cwiseAbs().maxCoeff();
    }
  };
  set_steps();

  auto project = [&](Eigen::VectorXd& v) { v = v.cwiseMax(p.lower).cwiseMin(p.upper); };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  project(x);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd Kx = p.K * x, Kty = Eigen::VectorXd::Zero(n), Qx = p.Q * x;
  Eigen::VectorXd x_sum = Eigen::VectorXd::Zero(n), y_sum = Eigen::VectorXd::Zero(m);
  int averaged = 0;

  Eigen::VectorXd x_anchor = x, y_anchor = y;
  double anchor_error = detail::evaluate(p, s.row_scale, x, y, Kx, Kty, Qx).error();
  double last_candidate_error = std::numeric_limits<double>::infinity();
  int since_restart = 0;

  Eigen::VectorXd best_x = x, best_y = y;
  double best_error = std::numeric_limits<double>::infinity();
  detail::Kkt best_kkt;

  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    Eigen::VectorXd x_next = x - tau * (Qx + p.c + Kty);
    project(x_next);
    const Eigen::VectorXd Kx_next = p.K * x_next;
    Eigen::VectorXd y_next = y;
    if (m > 0) y_next = (y + sigma * (2.0 * Kx_next - Kx - p.b)).cwiseMax(0.0);
    x = std::move(x_next);
    y = std::move(y_next);
    Kx = Kx_next;
    Kty = Kt * y;
    Qx = p.Q * x;
    x_sum += x;
    y_sum += y;
    ++averaged;
    ++since_restart;

    if ((iter + 1) % options.check_every != 0 && iter + 1 != options.max_iterations) continue;

    const detail::Kkt current = detail::evaluate(p, s.row_scale, x, y, Kx, Kty, Qx);
    const Eigen::VectorXd x_avg = x_sum / averaged;
    const Eigen::VectorXd y_avg = y_sum / averaged;
    const Eigen::VectorXd Kx_avg = p.K * x_avg, Kty_avg = Kt * y_avg, Qx_avg = p.Q * x_avg;
    const detail::Kkt average = detail::evaluate(p, s.row_scale, x_avg, y_avg, Kx_avg, Kty_avg, Qx_avg);
    const bool use_average = average.error() < current.error();
    const detail::Kkt& cand = use_average ? average : current;

    if (cand.error() < best_error) {
      best_error = cand.error();
      best_kkt = cand;
      best_x = use_average ? x_avg : x;
      best_y = use_average ? y_avg : y;
    }
    if (cand.residual <= options.tolerance && cand.gap <= options.tolerance) {
      out.converged = true;
      ++iter;
      break;
    }

    const bool restart = cand.error() <= 0.2 * anchor_error ||
                         (cand.error() <= 0.8 * anchor_error && cand.error() > last_candidate_error) ||
                         since_restart >= 0.36 * (iter + 1);
    last_candidate_error = cand.error();
    if (!restart) continue;

    const Eigen::VectorXd x_new = use_average ? x_avg : x;
    const Eigen::VectorXd y_new = use_average ? y_avg : y;
    const double dx = (x_new - x_anchor).norm();
    const double dy = (y_new - y_anchor).norm();
    if (dx > 1e-10 && dy > 1e-10) {
      omega = std::exp(0.5 * std::log(dy / dx) + 0.5 * std::log(omega));
      omega = std::clamp(omega, 1e-6, 1e6);
      set_steps();
    }
    x = x_new;
    y = y_new;
    Kx = p.K * x;
    Kty = Kt * y;
    Qx = p.Q * x;
    x_anchor = x;
    y_anchor = y;
    anchor_error = cand.error();
    last_candidate_error = std::numeric_limits<double>::infinity();
    x_sum.setZero();
    y_sum.setZero();
    averaged = 0;
    since_restart = 0;
    ++out.restarts;
  }

  out.iterations = iter;
  out.x = s.col_scale.cwiseProduct(best_x).cwiseMax(problem.lower).cwiseMin(problem.upper);
  out.y = s.row_scale.cwiseProduct(best_y) * s.objective_scale;
  out.objective = problem.objective(out.x);
  out.dual_bound = best_kkt.dual * s.objective_scale;
  out.max_violation = problem.max_violation(out.x);
  out.relative_gap = best_kkt.gap;
  out.relative_residual = best_kkt.residual;
  return out;
}

}  // namespace acnsim

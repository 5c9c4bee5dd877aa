#pragma once

// Sampling-period sweeps: run the learner at several h, compare against the
// Riccati solution, estimate expected costs, fit convergence orders.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "stochadp/adp.hpp"
#include "stochadp/error.hpp"
#include "stochadp/expectation.hpp"
#include "stochadp/linops.hpp"
#include "stochadp/model.hpp"
#include "stochadp/parallel.hpp"
#include "stochadp/riccati.hpp"
#include "stochadp/rng.hpp"
#include "stochadp/sde.hpp"
#include "stochadp/types.hpp"

namespace stochadp {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SweepRecord {
  double h = 0.0;
  int n_mc = 0;  // 0 for the exact-expectation modes
  int iters = 0;
  bool converged = false;
  double err_P = kNaN;
  double err_K = kNaN;
  double J_E_hat = kNaN;
  double J_E_hat_stderr = kNaN;
  double J_E_exact = kNaN;         // Tr(P_hat X0)
  double J_E_exact_stderr = kNaN;  // batch means; 0 in exact modes
  std::uint64_t seed = 0;
  double wall_time = 0.0;
  double mc_stderr = kNaN;  // of P_hat, Frobenius
  bool noise_limited = false;  // N_mc hit the cap before the stderr target
  std::string error;           // empty unless this h failed
  Matrix P_hat;
  Matrix K_hat;

  bool ok() const { return error.empty(); }
};

struct RateFit {
  double slope = kNaN;
  double intercept = kNaN;
  double r_squared = kNaN;
  int points_used = 0;
  double slope_stderr = kNaN;
  double intercept_stderr = kNaN;
};

// ---------------------------------------------------------------- costs

/// J_E = Tr(P X0) for x(0) with second moment X0.
inline double expected_cost_exact(const Matrix& P, const Matrix& X0) {
  if (P.rows() != P.cols() || X0.rows() != X0.cols() ||
      P.rows() != X0.rows()) {
    throw ConfigError("expected_cost_exact: P is " + shape_of(P) +
                      " but X0 is " + shape_of(X0));
  }
  return (P * X0).trace();
}

inline Matrix second_moment(const InitialStateSpec& x0) {
  return x0.covariance + x0.mean * x0.mean.transpose();
}

/// Truncation horizon for cost integrals: `time_constants` e-folds of the
/// slowest mean-square mode.
inline double cost_horizon(const LinearStochasticSystem& sys, const Matrix& K,
                           double time_constants = 8.0) {
  const StabilityReport stab = mean_square_stability(sys, K);
  if (!stab.is_stable) {
    std::ostringstream msg;
    msg << "cost horizon: gain is not mean-square stabilizing (spectral "
           "abscissa "
        << stab.spectral_abscissa << ")";
    throw NumericalError(msg.str());
  }
  return time_constants / std::abs(stab.spectral_abscissa);
}

struct CostEstimate {
  double estimate = kNaN;
  double stderr_ = kNaN;
};

/// Monte Carlo expected cost of u = -Kx over [0, horizon]: left Riemann sum
/// of x'Qx + u'Ru on an Euler grid of step h_sim, averaged over paths.
inline CostEstimate expected_cost_mc(const LinearStochasticSystem& sys,
                                     const Matrix& K,
                                     const InitialStateSpec& x0,
                                     double horizon, double h_sim,
                                     int n_paths, std::uint64_t seed,
                                     unsigned threads = 1) {
  require_valid(sys);
  if (n_paths < 2) throw ConfigError("expected_cost_mc: need >= 2 paths");
  if (!(h_sim > 0.0) || !(horizon > 0.0)) {
    throw ConfigError("expected_cost_mc: horizon and h_sim must be positive");
  }
  if (!mean_square_stability(sys, K).is_stable) {
    throw NumericalError(
        "expected_cost_mc: gain is not mean-square stabilizing; the cost "
        "integral diverges");
  }
  const auto steps =
      static_cast<Eigen::Index>(std::ceil(horizon / h_sim - 1e-9));
  const CounterNormal rng(seed);
  const EulerKernel kernel(sys, K, h_sim);
  const Eigen::Index n = sys.n(), m = sys.m();
  std::vector<double> costs(static_cast<std::size_t>(n_paths));
  parallel_for(costs.size(), threads, [&](std::size_t p) {
    const auto path = static_cast<std::uint32_t>(p);
    Vector x = draw_initial_state(x0, rng, path), xn(n);
    const Vector e = Vector::Zero(m);
    Vector u(m), noise(m), scratch(m);
    Vector dw1(static_cast<Eigen::Index>(sys.q1()));
    Vector dw2(static_cast<Eigen::Index>(sys.q2()));
    double c = 0.0;
    for (Eigen::Index j = 0; j < steps; ++j) {
      kernel.control(x, e, u);
      c += x.dot(sys.Q * x) + u.dot(sys.R * u);
      kernel.draw(rng, path, static_cast<std::uint64_t>(j), dw1, dw2);
      kernel.noise(x, u, dw1, dw2, noise);
      kernel.advance(x, u, noise, xn, scratch);
      x.swap(xn);
      if (!x.allFinite()) {
        throw NumericalError("expected_cost_mc: state diverged on path " +
                             std::to_string(p));
      }
    }
    costs[p] = c * h_sim;
  });
  double mean = 0.0;
  for (double c : costs) mean += c;
  mean /= n_paths;
  double ss = 0.0;
  for (double c : costs) ss += (c - mean) * (c - mean);
  return {mean, std::sqrt(ss / (n_paths - 1.0) / n_paths)};
}

// ---------------------------------------------------------------- sweep

enum class ExpectationMode { kSampled, kEulerExact, kContinuousExact };

inline const char* to_string(ExpectationMode m) {
  switch (m) {
    case ExpectationMode::kSampled: return "sampled";
    case ExpectationMode::kEulerExact: return "euler-exact";
    case ExpectationMode::kContinuousExact: return "continuous-exact";
  }
  return "?";
}

inline ExpectationMode expectation_mode_from_string(const std::string& s) {
  if (s == "sampled") return ExpectationMode::kSampled;
  if (s == "euler-exact") return ExpectationMode::kEulerExact;
  if (s == "continuous-exact") return ExpectationMode::kContinuousExact;
  throw ConfigError("unknown expectation mode '" + s +
                    "' (expected sampled, euler-exact or continuous-exact)");
}

struct SweepConfig {
  std::vector<double> h_list{0.04, 0.02, 0.01, 0.005, 0.0025, 0.00125};
  AdpConfig adp;  // h, n_mc and seed are set per point
  ExpectationMode mode = ExpectationMode::kSampled;
  std::uint64_t master_seed = 20240901;
  // Monte Carlo budget: start at n_mc_initial and grow by powers of two
  // until mc_stderr <= stderr_fraction * err_P or n_mc_cap is reached.
  int n_mc_initial = 256;
  int n_mc_cap = 32768;
  double stderr_fraction = 0.2;
  // Expected-cost estimate of each learned gain.
  int cost_paths = 1000;
  double cost_h_sim = 1e-3;
  double cost_time_constants = 8.0;
  unsigned threads = 1;

  SweepConfig() {
    adp.max_iter = 3;
    adp.tol = 1e-3;
  }
};

inline void validate_sweep_config(const SweepConfig& cfg, Eigen::Index n,
                                  Eigen::Index m) {
  if (cfg.h_list.size() < 4) {
    throw ConfigError("sweep: h_list needs at least 4 values, got " +
                      std::to_string(cfg.h_list.size()));
  }
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (double h : cfg.h_list) {
    if (!(h > 0.0) || !std::isfinite(h)) {
      throw ConfigError("sweep: h values must be positive");
    }
    steps_in(cfg.adp.delta_t, h, "sweep: delta_t");
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  if (hi < 10.0 * lo * (1.0 - 1e-12)) {
    std::ostringstream msg;
    msg << "sweep: h_list must span at least one decade (got " << lo
        << " .. " << hi << ")";
    throw ConfigError(msg.str());
  }
  if (cfg.mode == ExpectationMode::kSampled) {
    if (cfg.n_mc_initial < 2 || cfg.n_mc_cap < cfg.n_mc_initial) {
      throw ConfigError("sweep: need 2 <= n_mc_initial <= n_mc_cap");
    }
    if (!(cfg.stderr_fraction > 0.0)) {
      throw ConfigError("sweep: stderr_fraction must be positive");
    }
  }
  if (cfg.cost_paths != 0 && (cfg.cost_paths < 2 || !(cfg.cost_h_sim > 0.0))) {
    throw ConfigError("sweep: cost_paths must be 0 or >= 2 with h_sim > 0");
  }
  AdpConfig probe = cfg.adp;
  probe.h = cfg.h_list.front();
  probe.n_mc = std::max(1, cfg.n_mc_initial);
  validate_adp_config(probe, n, m);
}

inline std::uint64_t sweep_point_seed(std::uint64_t master, std::size_t i) {
  return derive_seed(master, 0x5EE9ull, static_cast<std::uint64_t>(i));
}

struct SweepResult {
  std::vector<SweepRecord> records;  // sorted by h, descending
  Matrix P_star;
  Matrix K_star;
  Matrix X0;  // second moment of x(0)
  double J_star = kNaN;
  double cost_horizon = kNaN;
  int riccati_iterations = 0;
};

namespace detail {

inline double stderr_of_trace(const std::vector<Matrix>& batch_P,
                              const Matrix& X0) {
  const auto B = static_cast<double>(batch_P.size());
  if (batch_P.size() < 2) return kNaN;
  std::vector<double> v;
  for (const Matrix& P : batch_P) v.push_back((P * X0).trace());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= B;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (B * (B - 1.0)));
}

inline int next_budget(int n, double se, double target, int cap) {
  const double ratio = (se / target) * (se / target);
  int out = n;
  while (out < cap && static_cast<double>(out) < ratio * n) out *= 2;
  return std::min(out, cap);
}

}  // namespace detail

/// One learner run per h. Per-point failures land in SweepRecord::error.
inline SweepResult sweep_h(const LinearStochasticSystem& sys,
                           const InitialStateSpec& x0, const SweepConfig& cfg,
                           std::optional<Matrix> K0_in = std::nullopt) {
  require_valid(sys);
  const auto x0_issues = validate(x0, sys.n());
  if (!x0_issues.empty()) throw ConfigError("sweep: " + x0_issues.front());
  validate_sweep_config(cfg, sys.n(), sys.m());

  SweepResult out;
  const Matrix K0 = K0_in ? *K0_in : lqr_initial_gain(sys);
  const RiccatiSolution star = solve(sys, K0, {});
  out.P_star = star.P_star;
  out.K_star = star.K_star;
  out.riccati_iterations = star.iterations;
  out.X0 = second_moment(x0);
  out.J_star = expected_cost_exact(star.P_star, out.X0);
  out.cost_horizon = cost_horizon(sys, star.K_star, cfg.cost_time_constants);

  const SimulatedPlant plant(sys, x0);
  for (std::size_t i = 0; i < cfg.h_list.size(); ++i) {
    SweepRecord rec;
    rec.h = cfg.h_list[i];
    rec.seed = sweep_point_seed(cfg.master_seed, i);
    const auto t_start = std::chrono::steady_clock::now();
    try {
      AdpConfig a = cfg.adp;
      a.h = rec.h;
      a.seed = rec.seed;
      a.threads = cfg.threads;
      a.observer = nullptr;
      if (cfg.mode == ExpectationMode::kSampled) {
        int n = cfg.n_mc_initial;
        for (;;) {
          a.n_mc = n;
          const AdpRunResult r = run_adp(plant, K0, sys.Q, sys.R, a);
          const PiStepSolution& last = r.iterates.back();
          rec.n_mc = n;
          rec.iters = r.iterations_used;
          rec.converged = r.converged;
          rec.P_hat = r.P_final;
          rec.K_hat = r.K_final;
          rec.mc_stderr = last.mc_stderr_P;
          rec.J_E_exact_stderr =
              detail::stderr_of_trace(last.batch_P_hat, out.X0);
          const double err = (r.P_final - out.P_star).norm();
          // An error above ||P*|| says nothing about the bias, and there
          // the batch-means stderr is unreliable too (near-singular Theta).
          const double scale = out.P_star.norm();
          const double target = cfg.stderr_fraction * std::min(err, scale);
          if (!(rec.mc_stderr > target) && err <= scale) break;
          if (n >= cfg.n_mc_cap) {
            rec.noise_limited = true;
            break;
          }
          n = std::min(cfg.n_mc_cap,
                       std::max(2 * n, detail::next_budget(n, rec.mc_stderr,
                                                           target, cfg.n_mc_cap)));
        }
      } else {
        const ExpectationKind kind =
            cfg.mode == ExpectationMode::kEulerExact
                ? ExpectationKind::kEuler
                : ExpectationKind::kContinuous;
        const int l = resolved_intervals(a, sys.n(), sys.m());
        const auto it = pi_with_expectations(sys, x0, K0, a.explore,
                                             a.delta_t, l, a.max_iter, kind,
                                             rec.h, a.mode);
        rec.n_mc = 0;
        rec.iters = static_cast<int>(it.size());
        rec.converged = true;
        rec.P_hat = it.back().P_hat;
        rec.K_hat = it.back().K_next;
        rec.mc_stderr = 0.0;
        rec.J_E_exact_stderr = 0.0;
      }
      rec.err_P = (rec.P_hat - out.P_star).norm();
      rec.err_K = (rec.K_hat - out.K_star).norm();
      rec.J_E_exact = expected_cost_exact(rec.P_hat, out.X0);
      if (cfg.cost_paths > 0) {
        const CostEstimate c = expected_cost_mc(
            sys, rec.K_hat, x0, out.cost_horizon, cfg.cost_h_sim,
            cfg.cost_paths, derive_seed(rec.seed, 0xC057ull, 0), cfg.threads);
        rec.J_E_hat = c.estimate;
        rec.J_E_hat_stderr = c.stderr_;
      }
    } catch (const Error& e) {
      rec.error = e.what();
    }
    rec.wall_time = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t_start)
                        .count();
    out.records.push_back(std::move(rec));
  }
  std::stable_sort(out.records.begin(), out.records.end(),
                   [](const SweepRecord& a, const SweepRecord& b) {
                     return a.h > b.h;
                   });
  return out;
}

// ---------------------------------------------------------------- fits

/// Ordinary least squares y = slope x + intercept with standard errors.
inline RateFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<int>(x.size());
  if (n < 3 || y.size() != x.size()) {
    throw ConfigError("fit: need at least 3 points, got " + std::to_string(n));
  }
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw ConfigError("fit: abscissae are all equal");
  RateFit f;
  f.points_used = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    sse += r * r;
  }
  f.r_squared = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
  const double s2 = n > 2 ? sse / (n - 2) : 0.0;
  f.slope_stderr = std::sqrt(s2 / sxx);
  f.intercept_stderr = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  return f;
}

enum class FitField { kErrP, kErrK, kJEHatMinusIntercept };

inline double field_value(const SweepRecord& r, FitField f) {
  switch (f) {
    case FitField::kErrP: return r.err_P;
    case FitField::kErrK: return r.err_K;
    case FitField::kJEHatMinusIntercept: return r.J_E_hat;
  }
  return kNaN;
}

enum class CostField { kJEHat, kJEExact };

/// Straight-line fit J_E = slope h + intercept over successful records.
inline RateFit fit_linear(const std::vector<SweepRecord>& records,
                          CostField field) {
  std::vector<double> x, y;
  for (const auto& r : records) {
    const double v = field == CostField::kJEHat ? r.J_E_hat : r.J_E_exact;
    if (r.ok() && std::isfinite(v)) {
      x.push_back(r.h);
      y.push_back(v);
    }
  }
  return ols(x, y);
}

/// Log-log order fit. For kJEHatMinusIntercept the intercept J0 of a
/// straight-line fit is removed first and the order of J_E_hat - J0 fitted.
inline RateFit fit_rate(const std::vector<SweepRecord>& records,
                        FitField field) {
  double shift = 0.0;
  if (field == FitField::kJEHatMinusIntercept) {
    shift = fit_linear(records, CostField::kJEHat).intercept;
  }
  std::vector<double> x, y;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    const double v = field_value(r, field) - shift;
    if (!std::isfinite(v)) continue;
    if (!(v > 0.0)) {
      throw ConfigError("fit_rate: non-positive value at h = " +
                        std::to_string(r.h) + " in log mode");
    }
    x.push_back(std::log(r.h));
    y.push_back(std::log(v));
  }
  return ols(x, y);
}

}  // namespace stochadp

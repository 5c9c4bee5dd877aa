#pragma once

// Data-driven policy iteration. Each step simulates the plant under
// u = -K_k x + e, sums the sampled integrals
//
//   delta_xx = x(x)x |_{t_r}^{t_{r+1}},   I_xx = sum x(x)x h,
//   I_uu = sum u(x)u h,                    I_xw = sum x(t_j)(x)dw_hat(t_j),
//
// over l intervals, averages them over independent runs and solves
//
//   [delta_xx, -2 I_xw, I_xx (K'(x)K') - I_uu] s = -I_xx vec(Q + K'RK)
//
// for s = [vec P; vec(B'P); vec Sigma_P]. The next gain comes from the
// identified blocks, (Sigma + R)^{-1} (B'P); A, B, F and G are never used.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stochadp/error.hpp"
#include "stochadp/linops.hpp"
#include "stochadp/parallel.hpp"
#include "stochadp/rng.hpp"
#include "stochadp/sde.hpp"
#include "stochadp/types.hpp"

namespace stochadp {

using Interval = std::pair<double, double>;

struct DataMatrices {
  Matrix delta_xx;  // l x n^2
  Matrix I_xx;      // l x n^2
  Matrix I_uu;      // l x m^2
  Matrix I_xw;      // l x (n m)
  std::vector<Interval> interval_bounds;
  double h = 0.0;

  Eigen::Index rows() const { return delta_xx.rows(); }
};

/// Which sample multiplies dw_hat(t_j) in I_xw. The left endpoint gives the
/// non-anticipating (Ito) sum; the right endpoint exists only to show the
/// bias it introduces.
enum class IntegralRule { kLeftEndpoint, kRightEndpoint };

inline std::vector<Interval> contiguous_intervals(double t0, double delta_t,
                                                  int l) {
  std::vector<Interval> out;
  out.reserve(static_cast<std::size_t>(l));
  for (int r = 0; r < l; ++r) {
    out.emplace_back(t0 + r * delta_t, t0 + (r + 1) * delta_t);
  }
  return out;
}

namespace detail {

inline Eigen::Index grid_index(const Trajectory& tr, double t) {
  const double pos = (t - tr.t0) / tr.h;
  const double rounded = std::round(pos);
  if (std::abs(pos - rounded) > 1e-9 * std::max(1.0, std::abs(rounded))) {
    std::ostringstream msg;
    msg << "interval bound " << t << " is off the sampling grid (h = " << tr.h
        << ")";
    throw ConfigError(msg.str());
  }
  return static_cast<Eigen::Index>(rounded);
}

}  // namespace detail

inline DataMatrices build_data_matrices(
    const Trajectory& tr, std::span<const Interval> intervals, const Matrix& K,
    IntegralRule rule = IntegralRule::kLeftEndpoint) {
  const Eigen::Index n = tr.states.rows();
  const Eigen::Index m = tr.inputs.rows();
  const auto l = static_cast<Eigen::Index>(intervals.size());
  if (l == 0) throw ConfigError("build_data_matrices: no intervals");
  if (K.rows() != m || K.cols() != n) {
    throw ConfigError("build_data_matrices: gain is " + shape_of(K) +
                      ", expected " + std::to_string(m) + "x" +
                      std::to_string(n));
  }
  if (tr.dw_hat.rows() != m || tr.dw_hat.cols() != tr.steps()) {
    throw ConfigError("build_data_matrices: trajectory is missing dw_hat "
                      "increments");
  }
  const bool check_policy = tr.exploration.cols() == tr.steps();
  const double h = tr.h;

  DataMatrices dm;
  dm.h = h;
  dm.delta_xx.resize(l, n * n);
  dm.I_xx.resize(l, n * n);
  dm.I_uu.resize(l, m * m);
  dm.I_xw.resize(l, n * m);
  dm.interval_bounds.assign(intervals.begin(), intervals.end());

  Matrix ixx(n, n), iuu(m, m), ixw_t(m, n);
  for (Eigen::Index r = 0; r < l; ++r) {
    const Eigen::Index a = detail::grid_index(tr, intervals[r].first);
    const Eigen::Index b = detail::grid_index(tr, intervals[r].second);
    if (a < 0 || b <= a) {
      throw ConfigError("build_data_matrices: interval must have start < end "
                        "on the trajectory");
    }
    if (b > tr.steps()) {
      throw ConfigError("build_data_matrices: interval extends past the "
                        "recorded increments");
    }
    if (check_policy) {
      const Vector resid =
          tr.inputs.col(a) + K * tr.states.col(a) - tr.exploration.col(a);
      if (resid.norm() > 1e-8 * (1.0 + tr.inputs.col(a).norm())) {
        throw ConfigError("build_data_matrices: recorded inputs were not "
                          "generated under the supplied gain");
      }
    }
    ixx.setZero();
    iuu.setZero();
    ixw_t.setZero();
    for (Eigen::Index j = a; j < b; ++j) {
      const double* x = tr.states.col(j).data();
      const double* u = tr.inputs.col(j).data();
      const double* w = tr.dw_hat.col(j).data();
      const double* xw = rule == IntegralRule::kLeftEndpoint
                             ? x
                             : tr.states.col(j + 1).data();
      for (Eigen::Index c = 0; c < n; ++c) {
        const double xc = x[c];
        for (Eigen::Index i = 0; i <= c; ++i) ixx(i, c) += x[i] * xc;
        for (Eigen::Index k = 0; k < m; ++k) ixw_t(k, c) += w[k] * xw[c];
      }
      for (Eigen::Index c = 0; c < m; ++c) {
        for (Eigen::Index i = 0; i <= c; ++i) iuu(i, c) += u[i] * u[c];
      }
    }
    ixx = ixx.selfadjointView<Eigen::Upper>();
    iuu = iuu.selfadjointView<Eigen::Upper>();
    ixx *= h;
    iuu *= h;
    const Vector xa = tr.states.col(a);
    const Vector xb = tr.states.col(b);
    const Matrix dxx = xb * xb.transpose() - xa * xa.transpose();
    dm.delta_xx.row(r) = vec(dxx).transpose();
    dm.I_xx.row(r) = vec(ixx).transpose();
    dm.I_uu.row(r) = vec(iuu).transpose();
    // Row entry i*m + k holds sum x_i w_k, i.e. vec of the m x n transpose.
    dm.I_xw.row(r) = vec(ixw_t).transpose();
  }
  return dm;
}

struct ThetaXi {
  Matrix theta;
  Vector xi;
};

inline Eigen::Index full_unknowns(Eigen::Index n, Eigen::Index m) {
  return n * n + n * m + m * m;
}

/// Unknown count once P and Sigma are restricted to symmetric matrices.
inline Eigen::Index symmetric_unknowns(Eigen::Index n, Eigen::Index m) {
  return n * (n + 1) / 2 + n * m + m * (m + 1) / 2;
}

inline ThetaXi assemble_theta_xi(const DataMatrices& dm, const Matrix& K,
                                 const Matrix& Q, const Matrix& R) {
  const Eigen::Index m = K.rows();
  const Eigen::Index n = K.cols();
  const Eigen::Index l = dm.rows();
  if (dm.I_xx.cols() != n * n || dm.I_uu.cols() != m * m ||
      dm.I_xw.cols() != n * m || Q.rows() != n || R.rows() != m) {
    throw ConfigError("assemble_theta_xi: dimension mismatch");
  }
  const Matrix Kt = K.transpose();
  ThetaXi out;
  out.theta.resize(l, full_unknowns(n, m));
  out.theta.leftCols(n * n) = dm.delta_xx;
  out.theta.middleCols(n * n, n * m) = -2.0 * dm.I_xw;
  out.theta.rightCols(m * m) = dm.I_xx * kron(Kt, Kt) - dm.I_uu;
  out.xi = -dm.I_xx * vec(Q + Kt * R * K);
  return out;
}

/// Elementwise mean, summed in input order.
inline ThetaXi average_over_runs(std::span<const ThetaXi> runs) {
  if (runs.empty()) throw ConfigError("average_over_runs: no runs");
  ThetaXi out = runs.front();
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].theta.rows() != out.theta.rows() ||
        runs[i].theta.cols() != out.theta.cols() ||
        runs[i].xi.size() != out.xi.size()) {
      throw ConfigError("average_over_runs: runs have different shapes");
    }
    out.theta += runs[i].theta;
    out.xi += runs[i].xi;
  }
  const double inv = 1.0 / static_cast<double>(runs.size());
  out.theta *= inv;
  out.xi *= inv;
  return out;
}

/// How the per-step linear system is solved.
///  - kSymmetric: unknowns restricted to the upper triangles of P and Sigma,
///    least squares over l >= symmetric_unknowns rows.
///  - kSquare: full vec unknowns with exactly l = n^2 + nm + m^2 rows and a
///    direct solve. Symmetric duplicates make this singular whenever n > 1
///    or m > 1, so it only works for scalar problems.
///  - kLeastSquares: full vec unknowns, minimum-norm least squares.
enum class SolveMode { kSquare, kSymmetric, kLeastSquares };

inline const char* to_string(SolveMode mode) {
  switch (mode) {
    case SolveMode::kSquare:
      return "square";
    case SolveMode::kSymmetric:
      return "symmetric";
    case SolveMode::kLeastSquares:
      return "least-squares";
  }
  return "?";
}

inline SolveMode solve_mode_from_string(const std::string& s) {
  if (s == "square") return SolveMode::kSquare;
  if (s == "symmetric") return SolveMode::kSymmetric;
  if (s == "least-squares") return SolveMode::kLeastSquares;
  throw ConfigError("unknown l_mode '" + s +
                    "' (expected square, symmetric or least-squares)");
}

/// Rows the data matrix needs in the given mode.
inline Eigen::Index required_rows(SolveMode mode, Eigen::Index n,
                                  Eigen::Index m) {
  return mode == SolveMode::kSymmetric ? symmetric_unknowns(n, m)
                                       : full_unknowns(n, m);
}

/// Full-vec unknowns expressed through the symmetric ones: s = T s_sym.
inline Matrix symmetric_expansion(Eigen::Index n, Eigen::Index m) {
  Matrix T = Matrix::Zero(full_unknowns(n, m), symmetric_unknowns(n, m));
  Eigen::Index col = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i, ++col) {
      T(j * n + i, col) = 1.0;
      T(i * n + j, col) = 1.0;
    }
  }
  for (Eigen::Index k = 0; k < n * m; ++k, ++col) T(n * n + k, col) = 1.0;
  const Eigen::Index off = n * n + n * m;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i, ++col) {
      T(off + j * m + i, col) = 1.0;
      T(off + i * m + j, col) = 1.0;
    }
  }
  return T;
}

struct PiStepSolution {
  int index = 0;
  Vector s_hat;  // [vec P; vec(B'P); vec Sigma]
  Matrix P_hat;
  Matrix BtP_hat;
  Matrix Sigma_hat;
  Matrix K;       // gain the data was collected under
  Matrix K_next;  // (Sigma_hat + R)^{-1} BtP_hat
  double condition_estimate = 0.0;
  Eigen::Index rank = 0;
  double mc_stderr_P = NAN;  // batch-means standard error, Frobenius
  double mc_stderr_K = NAN;
  std::vector<Matrix> batch_P_hat;  // per-batch estimates behind the stderr
  std::vector<std::string> diagnostics;
};

inline constexpr double kRankTolerance = 1e-12;
inline constexpr double kConditionWarning = 1e8;

inline PiStepSolution solve_pi_step(const Matrix& theta, const Vector& xi,
                                    Eigen::Index n, Eigen::Index m,
                                    const Matrix& R,
                                    SolveMode mode = SolveMode::kSymmetric) {
  const Eigen::Index p_full = full_unknowns(n, m);
  const Eigen::Index l = theta.rows();
  if (theta.cols() != p_full || xi.size() != l) {
    throw ConfigError("solve_pi_step: Theta is " + shape_of(theta) +
                      ", expected l x " + std::to_string(p_full));
  }
  if (R.rows() != m || R.cols() != m) {
    throw ConfigError("solve_pi_step: R has wrong shape");
  }
  const Eigen::Index needed = required_rows(mode, n, m);
  if (mode == SolveMode::kSquare ? l != needed : l < needed) {
    std::ostringstream msg;
    msg << "solve_pi_step: " << to_string(mode) << " mode needs "
        << (mode == SolveMode::kSquare ? "exactly " : "at least ") << needed
        << " intervals, got " << l;
    throw ConfigError(msg.str());
  }
  if (!theta.allFinite() || !xi.allFinite()) {
    throw NumericalError("solve_pi_step: non-finite data matrix");
  }

  const Matrix T = mode == SolveMode::kSymmetric ? symmetric_expansion(n, m)
                                                 : Matrix();
  const Matrix A = mode == SolveMode::kSymmetric ? Matrix(theta * T) : theta;
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv[0] : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > kRankTolerance * smax) ++rank;
  }
  const Eigen::Index required_rank =
      mode == SolveMode::kLeastSquares ? symmetric_unknowns(n, m) : A.cols();
  if (smax == 0.0 || rank < required_rank) {
    std::ostringstream msg;
    msg << "solve_pi_step: data matrix is rank deficient (rank " << rank
        << " < " << required_rank
        << "); the persistent excitation condition is violated - increase "
           "the exploration amplitude or the number of intervals";
    throw NumericalError(msg.str());
  }

  PiStepSolution out;
  out.rank = rank;
  out.condition_estimate = smax / sv[rank - 1];
  Vector s;
  switch (mode) {
    case SolveMode::kSquare:
      s = theta.partialPivLu().solve(xi);
      break;
    case SolveMode::kSymmetric:
      s = T * svd.solve(xi);
      break;
    case SolveMode::kLeastSquares: {
      const Matrix U = svd.matrixU().leftCols(rank);
      const Matrix V = svd.matrixV().leftCols(rank);
      s = V * (sv.head(rank).cwiseInverse().asDiagonal() *
               (U.transpose() * xi));
      break;
    }
  }
  if (!s.allFinite()) throw NumericalError("solve_pi_step: non-finite solution");
  if (out.condition_estimate > kConditionWarning) {
    std::ostringstream msg;
    msg << "data matrix condition estimate " << out.condition_estimate
        << " exceeds " << kConditionWarning;
    out.diagnostics.push_back(msg.str());
  }

  out.P_hat = symmetrize(unvec(s.head(n * n), n, n));
  out.BtP_hat = unvec(s.segment(n * n, n * m), m, n);
  out.Sigma_hat = symmetrize(unvec(s.tail(m * m), m, m));
  out.s_hat.resize(p_full);
  out.s_hat << vec(out.P_hat), vec(out.BtP_hat), vec(out.Sigma_hat);
  Eigen::PartialPivLU<Matrix> lu(out.Sigma_hat + R);
  if (!(lu.rcond() > 1e3 * std::numeric_limits<double>::epsilon())) {
    throw NumericalError("solve_pi_step: identified Sigma + R is singular");
  }
  out.K_next = lu.solve(out.BtP_hat);
  return out;
}

/// What the learner may see of the plant: dimensions and simulated runs
/// under a policy it chooses. No access to A, B, F or G.
template <typename S>
concept TrajectorySource =
    requires(const S& s, const Matrix& K, const ExplorationSignal& e,
             const Matrix* table) {
      { s.state_dim() } -> std::convertible_to<Eigen::Index>;
      { s.input_dim() } -> std::convertible_to<Eigen::Index>;
      {
        s.simulate(K, e, 0.0, 0.0, 0.0, std::uint64_t{}, std::uint32_t{},
                   table)
      } -> std::same_as<Trajectory>;
    };

/// Simulated environment wrapping a known system. The model stays private;
/// a learner holding a SimulatedPlant can only request trajectories.
class SimulatedPlant {
 public:
  SimulatedPlant(LinearStochasticSystem system, InitialStateSpec x0)
      : system_(std::move(system)), x0_(std::move(x0)) {}

  Eigen::Index state_dim() const { return system_.n(); }
  Eigen::Index input_dim() const { return system_.m(); }

  Trajectory simulate(const Matrix& K, const ExplorationSignal& explore,
                      double t0, double duration, double h, std::uint64_t seed,
                      std::uint32_t path, const Matrix* table) const {
    const CounterNormal rng(seed);
    const Vector x0 = draw_initial_state(x0_, rng, path);
    SimulateOptions opts;
    opts.path = path;
    opts.check_admissibility = false;
    opts.exploration = table;
    return stochadp::simulate(system_, K, explore, x0, t0, duration, h, seed,
                              opts);
  }

 private:
  LinearStochasticSystem system_;
  InitialStateSpec x0_;
};

struct AdpConfig {
  double h = 0.01;        // sampling period
  double delta_t = 0.2;   // interval length, an integer multiple of h
  int l = 0;              // intervals per run; 0 selects n^2 + nm + m^2
  int n_mc = 100;         // independent runs averaged per PI step
  int max_iter = 20;
  double tol = 1e-4;      // on ||P_{k+1} - P_k||_F / (1 + ||P_k||_F)
  ExplorationSignal explore;
  std::uint64_t seed = 1;
  SolveMode mode = SolveMode::kSymmetric;
  unsigned threads = 1;
  int batches = 10;       // batch means for the Monte Carlo standard error
  double divergence_bound = 1e6;
  // Called after every PI step; tests use it to audit iterates against the
  // model without giving the learner access to it.
  std::function<void(const PiStepSolution&)> observer;
};

struct AdpRunResult {
  std::vector<PiStepSolution> iterates;
  Matrix P_final;
  Matrix K_final;
  bool converged = false;
  int iterations_used = 0;
  // Data budget.
  int l = 0;
  int n_mc = 0;
  double h = 0.0;
  double delta_t = 0.0;
};

inline int resolved_intervals(const AdpConfig& cfg, Eigen::Index n,
                              Eigen::Index m) {
  return cfg.l > 0 ? cfg.l : static_cast<int>(full_unknowns(n, m));
}

/// Per-step seed: fresh Brownian paths for every PI iteration.
inline std::uint64_t iteration_seed(std::uint64_t seed, int k) {
  return derive_seed(seed, 0xADB0ull, static_cast<std::uint64_t>(k));
}

/// Averaged (Theta, Xi) for one PI step together with per-batch means.
struct SampledSystem {
  ThetaXi mean;
  std::vector<ThetaXi> batch_means;
};

template <TrajectorySource Source>
SampledSystem sample_theta_xi(const Source& plant, const Matrix& K,
                              const Matrix& Q, const Matrix& R,
                              const AdpConfig& cfg, std::uint64_t seed) {
  const Eigen::Index n = plant.state_dim();
  const Eigen::Index m = plant.input_dim();
  const int l = resolved_intervals(cfg, n, m);
  const Eigen::Index steps_per_interval =
      steps_in(cfg.delta_t, cfg.h, "run_adp: delta_t");
  const double duration = static_cast<double>(steps_per_interval) * l * cfg.h;
  const Eigen::Index total_steps = steps_per_interval * l;
  // Intervals must land on the grid exactly as the sampler sees it.
  std::vector<Interval> grid_intervals;
  grid_intervals.reserve(static_cast<std::size_t>(l));
  for (int r = 0; r < l; ++r) {
    grid_intervals.emplace_back(
        static_cast<double>(r * steps_per_interval) * cfg.h,
        static_cast<double>((r + 1) * steps_per_interval) * cfg.h);
  }
  const Matrix table = exploration_table(cfg.explore, m, 0.0, cfg.h, total_steps);

  const int batches = std::max(1, std::min(cfg.batches, cfg.n_mc));
  std::vector<ThetaXi> sums(static_cast<std::size_t>(batches));
  std::vector<int> counts(static_cast<std::size_t>(batches), 0);
  parallel_for(static_cast<std::size_t>(batches), cfg.threads,
               [&](std::size_t b) {
                 const int begin = static_cast<int>(
                     (static_cast<long long>(b) * cfg.n_mc) / batches);
                 const int end = static_cast<int>(
                     (static_cast<long long>(b + 1) * cfg.n_mc) / batches);
                 ThetaXi acc;
                 for (int p = begin; p < end; ++p) {
                   const Trajectory tr = plant.simulate(
                       K, cfg.explore, 0.0, duration, cfg.h, seed,
                       static_cast<std::uint32_t>(p), &table);
                   const DataMatrices dm =
                       build_data_matrices(tr, grid_intervals, K);
                   ThetaXi tx = assemble_theta_xi(dm, K, Q, R);
                   if (p == begin) {
                     acc = std::move(tx);
                   } else {
                     acc.theta += tx.theta;
                     acc.xi += tx.xi;
                   }
                 }
                 sums[b] = std::move(acc);
                 counts[b] = end - begin;
               });
  SampledSystem out;
  out.mean = sums.front();
  for (int b = 1; b < batches; ++b) {
    out.mean.theta += sums[static_cast<std::size_t>(b)].theta;
    out.mean.xi += sums[static_cast<std::size_t>(b)].xi;
  }
  out.mean.theta /= static_cast<double>(cfg.n_mc);
  out.mean.xi /= static_cast<double>(cfg.n_mc);
  out.batch_means.reserve(static_cast<std::size_t>(batches));
  for (int b = 0; b < batches; ++b) {
    ThetaXi tx = std::move(sums[static_cast<std::size_t>(b)]);
    tx.theta /= static_cast<double>(counts[static_cast<std::size_t>(b)]);
    tx.xi /= static_cast<double>(counts[static_cast<std::size_t>(b)]);
    out.batch_means.push_back(std::move(tx));
  }
  return out;
}

namespace detail {

/// Batch-means standard errors of P_hat and K_next.
inline void attach_batch_stderr(PiStepSolution& sol,
                                const std::vector<ThetaXi>& batches,
                                Eigen::Index n, Eigen::Index m,
                                const Matrix& R, SolveMode mode) {
  const auto B = static_cast<double>(batches.size());
  if (batches.size() < 2) return;
  std::vector<Matrix> Ps, Ks;
  for (const auto& tx : batches) {
    try {
      const PiStepSolution s = solve_pi_step(tx.theta, tx.xi, n, m, R, mode);
      Ps.push_back(s.P_hat);
      Ks.push_back(s.K_next);
    } catch (const Error&) {
      return;  // a batch too small to solve on its own: leave NaN
    }
  }
  auto stderr_of = [B](const std::vector<Matrix>& xs) {
    Matrix mean = Matrix::Zero(xs.front().rows(), xs.front().cols());
    for (const auto& x : xs) mean += x;
    mean /= B;
    double ss = 0.0;
    for (const auto& x : xs) ss += (x - mean).squaredNorm();
    return std::sqrt(ss / (B * (B - 1.0)));
  };
  sol.mc_stderr_P = stderr_of(Ps);
  sol.mc_stderr_K = stderr_of(Ks);
  sol.batch_P_hat = std::move(Ps);
}

}  // namespace detail

inline void validate_adp_config(const AdpConfig& cfg, Eigen::Index n,
                                Eigen::Index m) {
  if (!(cfg.h > 0.0)) throw ConfigError("adp: h must be positive");
  steps_in(cfg.delta_t, cfg.h, "adp: delta_t");
  if (cfg.n_mc < 1) throw ConfigError("adp: N_mc must be >= 1");
  if (cfg.max_iter < 1) throw ConfigError("adp: max_iter must be >= 1");
  if (!(cfg.tol > 0.0)) throw ConfigError("adp: tol must be positive");
  validate_exploration(cfg.explore, m);
  const int l = resolved_intervals(cfg, n, m);
  const Eigen::Index needed = required_rows(cfg.mode, n, m);
  if (cfg.mode == SolveMode::kSquare ? l != needed : l < needed) {
    std::ostringstream msg;
    msg << "adp: l = " << l << " intervals but " << to_string(cfg.mode)
        << " mode needs " << (cfg.mode == SolveMode::kSquare ? "" : "at least ")
        << needed;
    throw ConfigError(msg.str());
  }
}

/// Data-driven policy iteration from an admissible K0. Q and R are the
/// designer's cost weights; everything else is learned from trajectories.
template <TrajectorySource Source>
AdpRunResult run_adp(const Source& plant, const Matrix& K0, const Matrix& Q,
                     const Matrix& R, const AdpConfig& cfg) {
  const Eigen::Index n = plant.state_dim();
  const Eigen::Index m = plant.input_dim();
  if (K0.rows() != m || K0.cols() != n) {
    throw ConfigError("adp: K0 is " + shape_of(K0) + ", expected " +
                      std::to_string(m) + "x" + std::to_string(n));
  }
  validate_adp_config(cfg, n, m);

  AdpRunResult out;
  out.l = resolved_intervals(cfg, n, m);
  out.n_mc = cfg.n_mc;
  out.h = cfg.h;
  out.delta_t = cfg.delta_t;

  Matrix K = K0;
  for (int k = 0; k < cfg.max_iter; ++k) {
    const SampledSystem sample =
        sample_theta_xi(plant, K, Q, R, cfg, iteration_seed(cfg.seed, k));
    PiStepSolution sol =
        solve_pi_step(sample.mean.theta, sample.mean.xi, n, m, R, cfg.mode);
    sol.index = k;
    sol.K = K;
    detail::attach_batch_stderr(sol, sample.batch_means, n, m, R, cfg.mode);
    if (sol.P_hat.norm() > cfg.divergence_bound) {
      std::ostringstream msg;
      msg << "adp: value estimate diverged at iteration " << k
          << " (|P| = " << sol.P_hat.norm() << ")";
      throw NumericalError(msg.str());
    }
    if (cfg.observer) cfg.observer(sol);
    const bool done =
        !out.iterates.empty() &&
        (sol.P_hat - out.iterates.back().P_hat).norm() <=
            cfg.tol * (1.0 + out.iterates.back().P_hat.norm());
    K = sol.K_next;
    out.iterates.push_back(std::move(sol));
    if (done) {
      out.converged = true;
      break;
    }
  }
  out.iterations_used = static_cast<int>(out.iterates.size());
  out.P_final = out.iterates.back().P_hat;
  out.K_final = out.iterates.back().K_next;
  return out;
}

}  // namespace stochadp

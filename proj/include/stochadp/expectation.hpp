#pragma once

// Model-based expectations of the data matrices, used as oracles for the
// sampled learner:
//
//  * expected_data_continuous: E[delta_xx], E[I_xx], E[I_uu], E[I_xw] of the
//    exact SDE, from the first/second moment ODEs
//      mu' = A_K mu + B e,
//      M'  = A_K M + M A_K' + sum BF_i M F_i'B' + sum BG_i U G_i'B'
//            + B e mu' + mu e'B',        U = E[uu'],
//    integrated with RK4. The integrals ride along as extra RK4 state, so
//    E[delta_xx] is exactly the RK4 quadrature of M' and the identity
//    E[Theta] s = E[Xi] holds to roundoff for the policy-evaluation s.
//  * expected_data_euler: exact moments of the Euler-Maruyama chain with
//    step h, i.e. E of what the sampled learner computes. The difference to
//    the continuous version is the O(h) discretization bias.
//
// Dither is not supported: only deterministic exploration has a meaningful
// expectation here.

#include <vector>

#include "stochadp/adp.hpp"
#include "stochadp/error.hpp"
#include "stochadp/linops.hpp"
#include "stochadp/sde.hpp"
#include "stochadp/types.hpp"

namespace stochadp {

namespace detail {

struct MomentRates {
  Vector dmu;
  Matrix dM;
  Matrix U;     // E[u u']
  Matrix mu_e;  // E[x] e'
};

inline MomentRates moment_rates(const LinearStochasticSystem& sys,
                                const Matrix& K, const Matrix& Ak,
                                const Vector& mu, const Matrix& M,
                                const Vector& e) {
  MomentRates r;
  const Vector Kmu = K * mu;
  r.U = K * M * K.transpose() - Kmu * e.transpose() - e * Kmu.transpose() +
        e * e.transpose();
  r.mu_e = mu * e.transpose();
  r.dmu = Ak * mu + sys.B * e;
  const Matrix Be_mu = sys.B * e * mu.transpose();
  r.dM = Ak * M + M * Ak.transpose() + Be_mu + Be_mu.transpose();
  for (const Matrix& F : sys.F) {
    const Matrix BF = sys.B * F;
    r.dM += BF * M * BF.transpose();
  }
  for (const Matrix& G : sys.G) {
    const Matrix BG = sys.B * G;
    r.dM += BG * r.U * BG.transpose();
  }
  return r;
}

inline void check_expectation_inputs(const LinearStochasticSystem& sys,
                                     const Matrix& K,
                                     const ExplorationSignal& explore,
                                     const InitialStateSpec& x0) {
  if (K.rows() != sys.m() || K.cols() != sys.n()) {
    throw ConfigError("expected data: gain has wrong shape");
  }
  if (explore.noise_std > 0.0 &&
      explore.kind != ExplorationSignal::Kind::kZero) {
    throw ConfigError("expected data: Gaussian dither is not supported");
  }
  validate_exploration(explore, sys.m());
  if (x0.mean.size() != sys.n() || x0.covariance.rows() != sys.n()) {
    throw ConfigError("expected data: initial state has wrong dimension");
  }
}

inline void store_row(DataMatrices& dm, Eigen::Index r, const Matrix& dM,
                      const Matrix& ixx, const Matrix& iuu,
                      const Matrix& ixw) {
  dm.delta_xx.row(r) = vec(dM).transpose();
  dm.I_xx.row(r) = vec(ixx).transpose();
  dm.I_uu.row(r) = vec(iuu).transpose();
  dm.I_xw.row(r) = vec(ixw.transpose()).transpose();
}

inline DataMatrices allocate(Eigen::Index l, Eigen::Index n, Eigen::Index m,
                             double h, double t0, double delta_t) {
  DataMatrices dm;
  dm.h = h;
  dm.delta_xx.resize(l, n * n);
  dm.I_xx.resize(l, n * n);
  dm.I_uu.resize(l, m * m);
  dm.I_xw.resize(l, n * m);
  dm.interval_bounds =
      contiguous_intervals(t0, delta_t, static_cast<int>(l));
  return dm;
}

}  // namespace detail

inline DataMatrices expected_data_continuous(
    const LinearStochasticSystem& sys, const Matrix& K,
    const ExplorationSignal& explore, const InitialStateSpec& x0, double t0,
    double delta_t, int l, int substeps_per_interval = 400) {
  detail::check_expectation_inputs(sys, K, explore, x0);
  const Eigen::Index n = sys.n();
  const Eigen::Index m = sys.m();
  const Matrix Ak = sys.A - sys.B * K;
  const double dt = delta_t / substeps_per_interval;
  DataMatrices dm = detail::allocate(l, n, m, 0.0, t0, delta_t);

  Vector mu = x0.mean;
  Matrix M = x0.covariance + x0.mean * x0.mean.transpose();
  auto e_at = [&](double t) {
    return exploration_value(explore, t, m, std::nullopt);
  };
  for (int r = 0; r < l; ++r) {
    const Matrix M_start = M;
    Matrix ixx = Matrix::Zero(n, n), iuu = Matrix::Zero(m, m),
           ixw = Matrix::Zero(n, m);
    for (int s = 0; s < substeps_per_interval; ++s) {
      const double t = t0 + r * delta_t + s * dt;
      const auto k1 = detail::moment_rates(sys, K, Ak, mu, M, e_at(t));
      const auto k2 = detail::moment_rates(sys, K, Ak, mu + 0.5 * dt * k1.dmu,
                                           M + 0.5 * dt * k1.dM,
                                           e_at(t + 0.5 * dt));
      const auto k3 = detail::moment_rates(sys, K, Ak, mu + 0.5 * dt * k2.dmu,
                                           M + 0.5 * dt * k2.dM,
                                           e_at(t + 0.5 * dt));
      const auto k4 = detail::moment_rates(sys, K, Ak, mu + dt * k3.dmu,
                                           M + dt * k3.dM, e_at(t + dt));
      const double w = dt / 6.0;
      // Stage integrands: the stage second moments themselves.
      const Matrix M2 = M + 0.5 * dt * k1.dM;
      const Matrix M3 = M + 0.5 * dt * k2.dM;
      const Matrix M4 = M + dt * k3.dM;
      ixx += w * (M + 2.0 * M2 + 2.0 * M3 + M4);
      iuu += w * (k1.U + 2.0 * k2.U + 2.0 * k3.U + k4.U);
      ixw += w * (k1.mu_e + 2.0 * k2.mu_e + 2.0 * k3.mu_e + k4.mu_e);
      mu += w * (k1.dmu + 2.0 * k2.dmu + 2.0 * k3.dmu + k4.dmu);
      M += w * (k1.dM + 2.0 * k2.dM + 2.0 * k3.dM + k4.dM);
    }
    detail::store_row(dm, r, M - M_start, ixx, iuu, ixw);
  }
  return dm;
}

inline DataMatrices expected_data_euler(const LinearStochasticSystem& sys,
                                        const Matrix& K,
                                        const ExplorationSignal& explore,
                                        const InitialStateSpec& x0, double t0,
                                        double delta_t, int l, double h) {
  detail::check_expectation_inputs(sys, K, explore, x0);
  const Eigen::Index n = sys.n();
  const Eigen::Index m = sys.m();
  const Eigen::Index steps = steps_in(delta_t, h, "expected_data_euler");
  const Matrix Ak = sys.A - sys.B * K;
  const Matrix Phi = Matrix::Identity(n, n) + h * Ak;
  const Matrix table = exploration_table(explore, m, t0, h, steps * l);
  DataMatrices dm = detail::allocate(l, n, m, h, t0, delta_t);

  std::vector<Matrix> BF, BG;
  for (const Matrix& F : sys.F) BF.push_back(sys.B * F);
  for (const Matrix& G : sys.G) BG.push_back(sys.B * G);

  Vector mu = x0.mean;
  Matrix M = x0.covariance + x0.mean * x0.mean.transpose();
  Eigen::Index j = 0;
  for (int r = 0; r < l; ++r) {
    const Matrix M_start = M;
    Matrix ixx = Matrix::Zero(n, n), iuu = Matrix::Zero(m, m),
           ixw = Matrix::Zero(n, m);
    for (Eigen::Index s = 0; s < steps; ++s, ++j) {
      const Vector e = table.col(j);
      const Vector Kmu = K * mu;
      const Matrix U = K * M * K.transpose() - Kmu * e.transpose() -
                       e * Kmu.transpose() + e * e.transpose();
      ixx += h * M;
      iuu += h * U;
      ixw += h * mu * e.transpose();
      const Vector Be = sys.B * e;
      const Matrix cross = Phi * mu * Be.transpose();
      Matrix M_next = Phi * M * Phi.transpose() + h * (cross + cross.transpose()) +
                      h * h * Be * Be.transpose();
      for (const Matrix& N : BF) M_next += h * N * M * N.transpose();
      for (const Matrix& N : BG) M_next += h * N * U * N.transpose();
      mu = Phi * mu + h * Be;
      M = std::move(M_next);
    }
    detail::store_row(dm, r, M - M_start, ixx, iuu, ixw);
  }
  return dm;
}

enum class ExpectationKind { kContinuous, kEuler };

/// Policy iteration driven by exact expectations instead of Monte Carlo
/// averages; the per-step solve is the same one the sampled learner uses.
inline std::vector<PiStepSolution> pi_with_expectations(
    const LinearStochasticSystem& sys, const InitialStateSpec& x0,
    const Matrix& K0, const ExplorationSignal& explore, double delta_t, int l,
    int iterations, ExpectationKind kind, double h = 0.0,
    SolveMode mode = SolveMode::kSymmetric) {
  std::vector<PiStepSolution> out;
  Matrix K = K0;
  for (int k = 0; k < iterations; ++k) {
    const DataMatrices dm =
        kind == ExpectationKind::kContinuous
            ? expected_data_continuous(sys, K, explore, x0, 0.0, delta_t, l)
            : expected_data_euler(sys, K, explore, x0, 0.0, delta_t, l, h);
    const ThetaXi tx = assemble_theta_xi(dm, K, sys.Q, sys.R);
    PiStepSolution sol =
        solve_pi_step(tx.theta, tx.xi, sys.n(), sys.m(), sys.R, mode);
    sol.index = k;
    sol.K = K;
    K = sol.K_next;
    out.push_back(std::move(sol));
  }
  return out;
}

}  // namespace stochadp

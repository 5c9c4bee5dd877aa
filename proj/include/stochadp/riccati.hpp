#pragma once

// Model-based ground truth for the generalized algebraic Riccati equation
//
//   T(P) = A'P + PA - PB (Sigma_P + R)^{-1} B'P + Pi_P + Q = 0,
//   Sigma_P = sum_i G_i' B'PB G_i,   Pi_P = sum_i F_i' B'PB F_i,
//
// solved by policy iteration (successive generalized Lyapunov solves) and,
// independently, by Newton's method on T through its Frechet derivative.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stochadp/error.hpp"
#include "stochadp/linops.hpp"
#include "stochadp/model.hpp"
#include "stochadp/rng.hpp"
#include "stochadp/types.hpp"

namespace stochadp {

struct PiIterate {
  int index = 0;
  Matrix P;
  Matrix K;  // gain that produced P (policy evaluated at this step)
  double residual = 0.0;  // ||T(P)||_F
  double injected_error_norm = 0.0;
};

struct RiccatiSolution {
  Matrix P_star;
  Matrix K_star;
  int iterations = 0;
  double final_residual = 0.0;
  std::vector<PiIterate> history;
};

inline Matrix sigma_of(const LinearStochasticSystem& sys, const Matrix& P) {
  Matrix out = Matrix::Zero(sys.m(), sys.m());
  if (sys.G.empty()) return out;
  const Matrix BtPB = sys.B.transpose() * P * sys.B;
  for (const Matrix& G : sys.G) out += G.transpose() * BtPB * G;
  return out;
}

inline Matrix pi_of(const LinearStochasticSystem& sys, const Matrix& P) {
  Matrix out = Matrix::Zero(sys.n(), sys.n());
  if (sys.F.empty()) return out;
  const Matrix BtPB = sys.B.transpose() * P * sys.B;
  for (const Matrix& F : sys.F) out += F.transpose() * BtPB * F;
  return out;
}

namespace detail {

inline void require_square_n(const LinearStochasticSystem& sys,
                             const Matrix& P, const char* who) {
  if (P.rows() != sys.n() || P.cols() != sys.n()) {
    throw ConfigError(std::string(who) + ": matrix is " + shape_of(P) +
                      ", expected " + dims(sys.n(), sys.n()));
  }
}

/// LU of Sigma_P + R with a singularity check.
inline Eigen::PartialPivLU<Matrix> factor_control_weight(
    const LinearStochasticSystem& sys, const Matrix& P, const char* who) {
  Eigen::PartialPivLU<Matrix> lu(sigma_of(sys, P) + sys.R);
  if (!(lu.rcond() > 1e3 * std::numeric_limits<double>::epsilon())) {
    throw NumericalError(std::string(who) + ": Sigma_P + R is singular");
  }
  return lu;
}

}  // namespace detail

/// (Sigma_P + R)^{-1} B'P.
inline Matrix gain_from_value(const LinearStochasticSystem& sys,
                              const Matrix& P) {
  detail::require_square_n(sys, P, "gain_from_value");
  const auto lu = detail::factor_control_weight(sys, P, "gain_from_value");
  return lu.solve(sys.B.transpose() * P);
}

inline Matrix op_T(const LinearStochasticSystem& sys, const Matrix& P) {
  detail::require_square_n(sys, P, "op_T");
  const auto lu = detail::factor_control_weight(sys, P, "op_T");
  const Matrix BtP = sys.B.transpose() * P;
  return sys.A.transpose() * P + P * sys.A -
         BtP.transpose() * lu.solve(BtP) + pi_of(sys, P) + sys.Q;
}

/// Frechet derivative of T at P applied to W.
inline Matrix frechet_apply(const LinearStochasticSystem& sys, const Matrix& P,
                            const Matrix& W) {
  detail::require_square_n(sys, P, "frechet_apply");
  detail::require_square_n(sys, W, "frechet_apply");
  const auto lu = detail::factor_control_weight(sys, P, "frechet_apply");
  const Matrix BtP = sys.B.transpose() * P;
  const Matrix BtW = sys.B.transpose() * W;
  const Matrix S_inv_BtP = lu.solve(BtP);
  // W B, not (B'W)': the two agree only for symmetric W, and the dense
  // operator must stay invertible on the full vec space.
  return sys.A.transpose() * W + W * sys.A + pi_of(sys, W) -
         (W * sys.B) * S_inv_BtP - S_inv_BtP.transpose() * BtW +
         S_inv_BtP.transpose() * sigma_of(sys, W) * S_inv_BtP;
}

/// Dense n^2 x n^2 matrix of W -> T'_P W in the column-major vec basis.
inline Matrix frechet_matrix(const LinearStochasticSystem& sys,
                             const Matrix& P) {
  const Eigen::Index n = sys.n();
  Matrix J(n * n, n * n);
  Matrix E = Matrix::Zero(n, n);
  for (Eigen::Index col = 0; col < n; ++col) {
    for (Eigen::Index row = 0; row < n; ++row) {
      E(row, col) = 1.0;
      J.col(col * n + row) = vec(frechet_apply(sys, P, E));
      E(row, col) = 0.0;
    }
  }
  return J;
}

/// One Newton step on T: solves T'_{P} X = T'_{P} P - T(P) for X.
inline Matrix newton_step(const LinearStochasticSystem& sys, const Matrix& P,
                          int iteration_index = 0) {
  detail::require_square_n(sys, P, "newton_step");
  const Eigen::Index n = sys.n();
  const Matrix J = frechet_matrix(sys, P);
  Eigen::PartialPivLU<Matrix> lu(J);
  if (!(lu.rcond() > 1e3 * std::numeric_limits<double>::epsilon())) {
    std::ostringstream msg;
    msg << "newton_step: Frechet operator is singular at iteration "
        << iteration_index;
    throw NumericalError(msg.str());
  }
  const Vector rhs = J * vec(P) - vec(op_T(sys, P));
  return symmetrize(unvec(lu.solve(rhs), n, n));
}

/// Policy evaluation under K_k followed by policy improvement. Returns
/// (P_k, K_{k+1}).
inline std::pair<Matrix, Matrix> kleinman_step(
    const LinearStochasticSystem& sys, const Matrix& K) {
  const StabilityReport stab = mean_square_stability(sys, K);
  if (!stab.is_stable) {
    std::ostringstream msg;
    msg << "kleinman_step: gain is not admissible (mean-square spectral "
           "abscissa "
        << stab.spectral_abscissa << ")";
    throw NumericalError(msg.str());
  }
  std::vector<Matrix> maps;
  maps.reserve(sys.F.size() + sys.G.size());
  for (const Matrix& F : sys.F) maps.push_back(sys.B * F);
  for (const Matrix& G : sys.G) maps.push_back(sys.B * G * K);
  const Matrix M = sys.A - sys.B * K;
  const Matrix C = sys.Q + K.transpose() * sys.R * K;
  Matrix P = solve_generalized_lyapunov(M, maps, C);
  return {P, gain_from_value(sys, P)};
}

/// Noise-free continuous-time algebraic Riccati equation
/// A'X + XA - XBR^{-1}B'X + Q = 0 via the matrix sign function of the
/// Hamiltonian (Byers' scaled Newton iteration).
inline Matrix solve_care(const Matrix& A, const Matrix& B, const Matrix& Q,
                         const Matrix& R) {
  const Eigen::Index n = A.rows();
  Eigen::LLT<Matrix> R_chol(R);
  if (R_chol.info() != Eigen::Success) {
    throw ConfigError("solve_care: R not positive definite");
  }
  Matrix Z(2 * n, 2 * n);
  Z << A, B * R_chol.solve(B.transpose()), Q, -A.transpose();
  if (Z.fullPivLu().rank() < 2 * n) {
    throw NumericalError(
        "solve_care: Hamiltonian is singular (system not stabilizable or "
        "not detectable)");
  }
  const double p = static_cast<double>(2 * n);
  for (int it = 0; it < 100; ++it) {
    const Matrix Z_old = Z;
    const double ck = std::pow(std::abs(Z.determinant()), -1.0 / p);
    Z *= ck;
    Z = 0.5 * (Z + Z.inverse());
    if ((Z - Z_old).norm() <= 1e-12 * (1.0 + Z.norm())) break;
  }
  const Matrix I = Matrix::Identity(n, n);
  Matrix lhs(2 * n, n);
  Matrix rhs(2 * n, n);
  lhs << Z.block(0, n, n, n), Z.block(n, n, n, n) + I;
  rhs << Z.block(0, 0, n, n) + I, Z.block(n, 0, n, n);
  Matrix X =
      lhs.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
  if (!X.allFinite()) throw NumericalError("solve_care: non-finite solution");
  return symmetrize(X);
}

/// Gain of the noise-free LQR for (A, B, Q, R), verified admissible for the
/// noisy system.
inline Matrix lqr_initial_gain(const LinearStochasticSystem& sys) {
  const Matrix X = solve_care(sys.A, sys.B, sys.Q, sys.R);
  const Matrix K = sys.R.llt().solve(sys.B.transpose() * X);
  const StabilityReport stab = mean_square_stability(sys, K);
  if (!stab.is_stable) {
    std::ostringstream msg;
    msg << "noise-free LQR gain is not mean-square admissible for the noisy "
           "system (spectral abscissa "
        << stab.spectral_abscissa << "); supply K0 explicitly";
    throw NumericalError(msg.str());
  }
  return K;
}

struct RiccatiOptions {
  double tol = 1e-12;
  int max_iter = 100;
};

/// Policy iteration from an admissible K0 until the relative step
/// ||P_{k+1} - P_k||_F <= tol (1 + ||P_k||_F).
inline RiccatiSolution solve(const LinearStochasticSystem& sys,
                             const Matrix& K0, RiccatiOptions opts = {}) {
  require_valid(sys);
  const StabilityReport stab = mean_square_stability(sys, K0);
  if (!stab.is_stable) {
    std::ostringstream msg;
    msg << "riccati solve: K0 is not admissible (mean-square spectral "
           "abscissa "
        << stab.spectral_abscissa << ")";
    throw NumericalError(msg.str());
  }
  RiccatiSolution out;
  Matrix K = K0;
  Matrix P_prev;
  for (int k = 0; k < opts.max_iter; ++k) {
    auto [P, K_next] = kleinman_step(sys, K);
    out.history.push_back({k, P, K, op_T(sys, P).norm(), 0.0});
    const bool done =
        k > 0 && (P - P_prev).norm() <= opts.tol * (1.0 + P_prev.norm());
    P_prev = std::move(P);
    K = std::move(K_next);
    if (done) {
      out.P_star = P_prev;
      out.K_star = K;
      out.iterations = k + 1;
      out.final_residual = out.history.back().residual;
      return out;
    }
  }
  std::ostringstream msg;
  msg << "riccati solve: no convergence within " << opts.max_iter
      << " iterations (last residual " << out.history.back().residual << ")";
  throw NonConvergenceError(msg.str());
}

/// Random symmetric perturbation with Frobenius norm exactly `delta`; the
/// direction for step k depends only on (seed, k).
struct SymmetricPerturbation {
  double delta = 0.0;
  std::uint64_t seed = 0;

  Matrix operator()(Eigen::Index n, int k) const {
    if (delta == 0.0) return Matrix::Zero(n, n);
    PhiloxEngine eng(derive_seed(seed, static_cast<std::uint64_t>(
                                           Stream::kPerturbation),
                                 static_cast<std::uint64_t>(k)));
    Matrix E(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) E(i, j) = eng.normal();
    }
    E = symmetrize(E);
    return delta * E / E.norm();
  }
};

/// Newton step plus an injected error E_k.
inline Matrix perturbed_iterate(const LinearStochasticSystem& sys,
                                const Matrix& P_hat, const Matrix& E) {
  return newton_step(sys, P_hat) + E;
}

template <typename ErrorGenerator>
Matrix perturbed_iterate(const LinearStochasticSystem& sys,
                         const Matrix& P_hat, const ErrorGenerator& gen,
                         int k) {
  return perturbed_iterate(sys, P_hat, gen(sys.n(), k));
}

/// Largest observed ratio ||Psi(P) - Psi(P')||_F / ||P - P'||_F over random
/// symmetric pairs within `radius` of `center`, where Psi is the Newton map.
inline double estimate_contraction(const LinearStochasticSystem& sys,
                                   const Matrix& center, double radius,
                                   int samples, std::uint64_t seed) {
  const Eigen::Index n = sys.n();
  PhiloxEngine eng(seed, 17);
  auto random_point = [&] {
    Matrix E(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) E(i, j) = eng.normal();
    }
    E = symmetrize(E);
    return Matrix(center + radius * eng.uniform() * E / E.norm());
  };
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const Matrix P = random_point();
    const Matrix Pp = (s % 2 == 0) ? center : random_point();
    const double denom = (P - Pp).norm();
    if (denom == 0.0) continue;
    const double ratio =
        (newton_step(sys, P) - newton_step(sys, Pp)).norm() / denom;
    worst = std::max(worst, ratio);
  }
  return worst;
}

}  // namespace stochadp

#pragma once

// Problem definition: validation of a LinearStochasticSystem, admissibility
// of a gain, and the planar arm preset (hand position, velocity and muscle
// activation driven through first-order filters with control-dependent
// noise).

#include <cmath>
#include <string>
#include <vector>

#include "stochadp/error.hpp"
#include "stochadp/linops.hpp"
#include "stochadp/types.hpp"

namespace stochadp {

namespace detail {

inline bool is_symmetric(const Matrix& M, double rel_tol = 1e-10) {
  if (M.rows() != M.cols()) return false;
  return (M - M.transpose()).norm() <= rel_tol * (1.0 + M.norm());
}

inline double min_symmetric_eigenvalue(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline std::string dims(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

/// Returns one diagnostic per violated well-posedness check; empty when the
/// system is usable. Checks are necessary conditions only (no observability
/// test).
inline std::vector<std::string> validate(const LinearStochasticSystem& sys) {
  std::vector<std::string> out;
  const Eigen::Index n = sys.A.rows();
  const Eigen::Index m = sys.B.cols();
  if (n < 1 || sys.A.cols() != n) {
    out.push_back("A is " + shape_of(sys.A) + ", expected square with n >= 1");
    return out;
  }
  if (sys.B.rows() != n || m < 1) {
    out.push_back("B is " + shape_of(sys.B) + ", expected " +
                  detail::dims(n, m) + " with m >= 1");
    return out;
  }
  for (std::size_t i = 0; i < sys.F.size(); ++i) {
    if (sys.F[i].rows() != m || sys.F[i].cols() != n) {
      out.push_back("F[" + std::to_string(i) + "] is " + shape_of(sys.F[i]) +
                    ", expected " + detail::dims(m, n));
    }
  }
  for (std::size_t i = 0; i < sys.G.size(); ++i) {
    if (sys.G[i].rows() != m || sys.G[i].cols() != m) {
      out.push_back("G[" + std::to_string(i) + "] is " + shape_of(sys.G[i]) +
                    ", expected " + detail::dims(m, m));
    }
  }
  auto finite = [&](const Matrix& M, const std::string& name) {
    if (!M.allFinite()) out.push_back(name + " has non-finite entries");
  };
  finite(sys.A, "A");
  finite(sys.B, "B");
  for (const auto& F : sys.F) finite(F, "F");
  for (const auto& G : sys.G) finite(G, "G");

  if (sys.Q.rows() != n || sys.Q.cols() != n) {
    out.push_back("Q is " + shape_of(sys.Q) + ", expected " +
                  detail::dims(n, n));
  } else if (!sys.Q.allFinite()) {
    out.push_back("Q has non-finite entries");
  } else if (!detail::is_symmetric(sys.Q)) {
    out.push_back("Q not symmetric");
  } else if (detail::min_symmetric_eigenvalue(sys.Q) <
             -1e-12 * (1.0 + sys.Q.norm())) {
    out.push_back("Q not positive semidefinite");
  }

  if (sys.R.rows() != m || sys.R.cols() != m) {
    out.push_back("R is " + shape_of(sys.R) + ", expected " +
                  detail::dims(m, m));
  } else if (!sys.R.allFinite()) {
    out.push_back("R has non-finite entries");
  } else if (!detail::is_symmetric(sys.R)) {
    out.push_back("R not symmetric");
  } else if (!(detail::min_symmetric_eigenvalue(sys.R) > 0.0)) {
    out.push_back("R not positive definite");
  }
  return out;
}

inline std::vector<std::string> validate(const InitialStateSpec& x0,
                                         Eigen::Index n) {
  std::vector<std::string> out;
  if (x0.mean.size() != n) {
    out.push_back("x0_mean has length " + std::to_string(x0.mean.size()) +
                  ", expected " + std::to_string(n));
  }
  if (x0.covariance.rows() != n || x0.covariance.cols() != n) {
    out.push_back("x0_cov is " + shape_of(x0.covariance) + ", expected " +
                  detail::dims(n, n));
    return out;
  }
  if (!x0.mean.allFinite() || !x0.covariance.allFinite()) {
    out.push_back("initial state has non-finite entries");
  } else if (!detail::is_symmetric(x0.covariance)) {
    out.push_back("x0_cov not symmetric");
  } else if (detail::min_symmetric_eigenvalue(x0.covariance) <
             -1e-12 * (1.0 + x0.covariance.norm())) {
    out.push_back("x0_cov not positive semidefinite");
  }
  return out;
}

/// Throws ConfigError listing every diagnostic when validation fails.
inline void require_valid(const LinearStochasticSystem& sys) {
  const auto diags = validate(sys);
  if (diags.empty()) return;
  std::string msg = "invalid system:";
  for (const auto& d : diags) msg += " " + d + ";";
  throw ConfigError(msg);
}

/// K is admissible iff the closed loop u = -Kx is mean-square stable.
inline StabilityReport check_admissible(const LinearStochasticSystem& sys,
                                        const Matrix& K) {
  return mean_square_stability(sys, K);
}

/// Parameters of the planar arm preset. Defaults are placeholders chosen to
/// give a well-posed problem; they are not calibrated to any experiment.
struct ArmParams {
  double mass = 1.3;            // kg
  double viscosity = 10.0;      // N s / m
  double time_constant = 0.05;  // s
  double c1 = 0.075;            // control-dependent noise magnitudes
  double c2 = 0.025;
  // Velocity-dependent force field f = L v.
  Matrix force_field = (Matrix(2, 2) << 0.0, 2.0, -2.0, 0.0).finished();
  Matrix Q = Matrix::Identity(6, 6);
  Matrix R = Matrix::Identity(2, 2);
  Vector x0_mean = Vector::Zero(6);
  Matrix x0_cov = Matrix::Identity(6, 6);
};

struct ArmModel {
  LinearStochasticSystem system;
  InitialStateSpec initial_state;
};

/// State (p_x, p_y, v_x, v_y, a_x, a_y), input (u_x, u_y):
///   dp = v dt,  m dv = (a - b v + L v) dt,  tau da = (u - a) dt + dw,
/// with dw = [[c1,0],[c2,0]] u dw_1 + [[0,c2],[0,c1]] u dw_2.
inline ArmModel sensorimotor_arm(const ArmParams& p = {}) {
  if (!(p.mass > 0.0)) throw ConfigError("arm: mass must be positive");
  if (!(p.time_constant > 0.0)) {
    throw ConfigError("arm: time_constant must be positive");
  }
  if (!(p.viscosity >= 0.0)) {
    throw ConfigError("arm: viscosity must be non-negative");
  }
  if (p.force_field.rows() != 2 || p.force_field.cols() != 2) {
    throw ConfigError("arm: force_field is " + shape_of(p.force_field) +
                      ", expected 2x2");
  }
  const Matrix I2 = Matrix::Identity(2, 2);
  ArmModel out;
  LinearStochasticSystem& s = out.system;
  s.A = Matrix::Zero(6, 6);
  s.A.block(0, 2, 2, 2) = I2;
  s.A.block(2, 2, 2, 2) = (p.force_field - p.viscosity * I2) / p.mass;
  s.A.block(2, 4, 2, 2) = I2 / p.mass;
  s.A.block(4, 4, 2, 2) = -I2 / p.time_constant;
  s.B = Matrix::Zero(6, 2);
  s.B.block(4, 0, 2, 2) = I2 / p.time_constant;
  s.G.push_back((Matrix(2, 2) << p.c1, 0.0, p.c2, 0.0).finished());
  s.G.push_back((Matrix(2, 2) << 0.0, p.c2, 0.0, p.c1).finished());
  s.Q = p.Q;
  s.R = p.R;
  out.initial_state = {p.x0_mean, p.x0_cov};
  require_valid(s);
  const auto x0_diags = validate(out.initial_state, 6);
  if (!x0_diags.empty()) throw ConfigError("arm: " + x0_diags.front());
  return out;
}

}  // namespace stochadp

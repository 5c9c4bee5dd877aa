#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace stochadp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Linear SDE with state- and control-dependent noise
///
///   dx = (Ax + Bu) dt + B dw,
///   dw = sum_i F_i x dw1_i + sum_i G_i u dw2_i,
///
/// together with the quadratic running cost x'Qx + u'Ru.
struct LinearStochasticSystem {
  Matrix A;               // n x n
  Matrix B;               // n x m
  std::vector<Matrix> F;  // q1 entries, each m x n
  std::vector<Matrix> G;  // q2 entries, each m x m
  Matrix Q;               // n x n, symmetric PSD
  Matrix R;               // m x m, symmetric PD

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
  std::size_t q1() const { return F.size(); }
  std::size_t q2() const { return G.size(); }
};

/// Distribution of x(0): mean and second-moment-about-the-mean X0.
struct InitialStateSpec {
  Vector mean;
  Matrix covariance;
};

struct StabilityReport {
  bool is_stable = false;
  // Largest real part among the second-moment generator's eigenvalues.
  double spectral_abscissa = 0.0;
};

inline std::string shape_of(const Matrix& M) {
  return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
}

}  // namespace stochadp

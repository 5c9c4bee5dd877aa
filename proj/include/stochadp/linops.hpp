#pragma once

// Dense small-matrix helpers: Kronecker products, column-major
// vectorization, generalized Lyapunov solves and mean-square stability.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <span>
#include <sstream>

#include "stochadp/error.hpp"
#include "stochadp/types.hpp"

namespace stochadp {

inline Matrix kron(const Matrix& A, const Matrix& B) {
  Matrix out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return out;
}

/// Stacks the columns of M top to bottom.
inline Vector vec(const Matrix& M) {
  return Eigen::Map<const Vector>(M.data(), M.size());
}

inline Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw ConfigError("unvec: vector of length " + std::to_string(v.size()) +
                      " cannot be reshaped to " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline Matrix symmetrize(const Matrix& M) {
  if (M.rows() != M.cols()) {
    throw ConfigError("symmetrize: matrix is " + shape_of(M) +
                      ", expected square");
  }
  return 0.5 * (M + M.transpose());
}

inline bool all_finite(const Matrix& M) { return M.allFinite(); }

/// Solves M'P + PM + sum_j N_j' P N_j + C = 0 for P by vectorizing into an
/// n^2 x n^2 dense system. The noise terms break the Sylvester structure
/// that Bartels-Stewart relies on, and problems here have n <= ~10.
inline Matrix solve_generalized_lyapunov(const Matrix& M,
                                         std::span<const Matrix> noise_maps,
                                         const Matrix& C) {
  const Eigen::Index n = M.rows();
  if (M.cols() != n) {
    throw ConfigError("solve_generalized_lyapunov: M is " + shape_of(M) +
                      ", expected square");
  }
  if (C.rows() != n || C.cols() != n) {
    throw ConfigError("solve_generalized_lyapunov: C is " + shape_of(C) +
                      ", expected " + shape_of(M));
  }
  const Matrix I = Matrix::Identity(n, n);
  const Matrix Mt = M.transpose();
  Matrix op = kron(I, Mt) + kron(Mt, I);
  for (const Matrix& N : noise_maps) {
    if (N.rows() != n || N.cols() != n) {
      throw ConfigError("solve_generalized_lyapunov: noise map is " +
                        shape_of(N) + ", expected " + shape_of(M));
    }
    const Matrix Nt = N.transpose();
    op += kron(Nt, Nt);
  }
  Eigen::PartialPivLU<Matrix> lu(op);
  const double rcond = lu.rcond();
  if (!(rcond > 1e3 * std::numeric_limits<double>::epsilon())) {
    std::ostringstream msg;
    msg << "solve_generalized_lyapunov: Lyapunov operator is singular "
        << "(condition estimate " << (rcond > 0 ? 1.0 / rcond : INFINITY)
        << ")";
    throw NumericalError(msg.str());
  }
  const Vector p = lu.solve(-vec(C));
  Matrix P = symmetrize(unvec(p, n, n));
  if (!P.allFinite()) {
    throw NumericalError("solve_generalized_lyapunov: non-finite solution");
  }
  return P;
}

/// Generator of vec(E[xx']) for the closed loop u = -Kx:
/// I (x) A_K + A_K (x) I + sum (BF_i)(x)(BF_i) + sum (BG_iK)(x)(BG_iK).
inline Matrix second_moment_generator(const LinearStochasticSystem& sys,
                                      const Matrix& K) {
  const Eigen::Index n = sys.n();
  const Eigen::Index m = sys.m();
  if (K.rows() != m || K.cols() != n) {
    throw ConfigError("gain K is " + shape_of(K) + ", expected " +
                      std::to_string(m) + "x" + std::to_string(n));
  }
  const Matrix I = Matrix::Identity(n, n);
  const Matrix Ak = sys.A - sys.B * K;
  Matrix L = kron(I, Ak) + kron(Ak, I);
  for (const Matrix& F : sys.F) {
    const Matrix BF = sys.B * F;
    L += kron(BF, BF);
  }
  for (const Matrix& G : sys.G) {
    const Matrix BGK = sys.B * G * K;
    L += kron(BGK, BGK);
  }
  return L;
}

/// Mean-square stability of the closed loop u = -Kx. The verdict is strict:
/// a zero abscissa is reported as not stable.
inline StabilityReport mean_square_stability(const LinearStochasticSystem& sys,
                                             const Matrix& K) {
  const Matrix L = second_moment_generator(sys, K);
  Eigen::EigenSolver<Matrix> es(L, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw NumericalError("mean_square_stability: eigenvalue solver failed");
  }
  StabilityReport report;
  report.spectral_abscissa = es.eigenvalues().real().maxCoeff();
  report.is_stable = report.spectral_abscissa < 0.0;
  return report;
}

}  // namespace stochadp

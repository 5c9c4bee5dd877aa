#pragma once

// Euler-Maruyama simulation of the closed loop u = -Kx + e under state- and
// control-dependent noise. Besides states and inputs, each step records the
// increment
//
//   dw_hat = e h + sum_i F_i x dW1_i + sum_i G_i u dW2_i,
//
// which the data-driven learner treats as an observed signal.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stochadp/error.hpp"
#include "stochadp/linops.hpp"
#include "stochadp/rng.hpp"
#include "stochadp/types.hpp"

namespace stochadp {

struct Sinusoid {
  int channel = 0;
  double amplitude = 0.0;
  double frequency = 0.0;  // rad / time
  double phase = 0.0;      // rad
};

/// Probing signal added to the feedback during learning: a sum of
/// sinusoids per input channel, optional Gaussian dither, or nothing.
struct ExplorationSignal {
  enum class Kind { kZero, kSinusoids, kGaussian };

  Kind kind = Kind::kZero;
  std::vector<Sinusoid> terms;
  double noise_std = 0.0;

  /// Deterministic bound on the sinusoidal part for one channel.
  double amplitude_bound(int channel) const {
    double b = 0.0;
    for (const auto& s : terms) {
      if (s.channel == channel) b += std::abs(s.amplitude);
    }
    return b;
  }
};

inline void validate_exploration(const ExplorationSignal& e, Eigen::Index m) {
  if (!(e.noise_std >= 0.0) || !std::isfinite(e.noise_std)) {
    throw ConfigError("exploration: noise_std must be finite and >= 0");
  }
  for (const auto& s : e.terms) {
    if (s.channel < 0 || s.channel >= m) {
      throw ConfigError("exploration: sinusoid channel " +
                        std::to_string(s.channel) + " out of range for m=" +
                        std::to_string(m));
    }
    if (!std::isfinite(s.amplitude) || !std::isfinite(s.frequency) ||
        !std::isfinite(s.phase)) {
      throw ConfigError("exploration: non-finite sinusoid parameter");
    }
  }
}

/// Per channel, `count` sinusoids with frequencies base * sqrt(p) for
/// distinct primes p (pairwise irrational ratios, also across channels),
/// amplitudes amplitude / (k + 1), and fixed phases.
inline ExplorationSignal default_exploration(Eigen::Index m,
                                             double amplitude = 1.0,
                                             double base_frequency = 1.0,
                                             int count = 10,
                                             double noise_std = 0.0) {
  std::vector<int> primes;
  for (int c = 2; static_cast<Eigen::Index>(primes.size()) < m * count; ++c) {
    bool prime = true;
    for (int p : primes) {
      if (p * p > c) break;
      if (c % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(c);
  }
  ExplorationSignal e;
  e.kind = ExplorationSignal::Kind::kSinusoids;
  e.noise_std = noise_std;
  // Interleave channels so each gets a spread of low and high frequencies.
  constexpr double kGoldenAngle = 2.399963229728653;
  for (int k = 0; k < count; ++k) {
    for (Eigen::Index c = 0; c < m; ++c) {
      const int p = primes[static_cast<std::size_t>(k * m + c)];
      e.terms.push_back({static_cast<int>(c), amplitude / (k + 1),
                         base_frequency * std::sqrt(static_cast<double>(p)),
                         kGoldenAngle * static_cast<double>(k * m + c)});
    }
  }
  return e;
}

/// Gaussian dither draw for one (path, step).
struct DitherDraw {
  const CounterNormal* rng = nullptr;
  std::uint32_t path = 0;
  std::uint64_t step = 0;
};

inline Vector exploration_value(const ExplorationSignal& e, double t,
                                Eigen::Index m,
                                std::optional<DitherDraw> dither = {}) {
  Vector out = Vector::Zero(m);
  if (e.kind == ExplorationSignal::Kind::kZero) return out;
  if (e.kind == ExplorationSignal::Kind::kSinusoids) {
    for (const auto& s : e.terms) {
      out[s.channel] += s.amplitude * std::sin(s.frequency * t + s.phase);
    }
  }
  if (e.noise_std > 0.0 && dither && dither->rng != nullptr) {
    for (Eigen::Index c = 0; c < m; ++c) {
      out[c] += e.noise_std * dither->rng->normal(dither->path, dither->step,
                                                  Stream::kDither,
                                                  static_cast<std::uint32_t>(c));
    }
  }
  return out;
}

/// Deterministic part of the exploration on t0 + j h, j = 0..steps-1; one
/// column per step.
inline Matrix exploration_table(const ExplorationSignal& e, Eigen::Index m,
                                double t0, double h, Eigen::Index steps) {
  Matrix table(m, steps);
  for (Eigen::Index j = 0; j < steps; ++j) {
    table.col(j) =
        exploration_value(e, t0 + static_cast<double>(j) * h, m, std::nullopt);
  }
  return table;
}

/// x + (Ax + Bu) h + B (sum_i F_i x dW1_i + sum_i G_i u dW2_i).
inline Vector em_step(const LinearStochasticSystem& sys, const Vector& x,
                      const Vector& u, const Vector& dW1, const Vector& dW2,
                      double h) {
  if (x.size() != sys.n() || u.size() != sys.m() ||
      dW1.size() != static_cast<Eigen::Index>(sys.q1()) ||
      dW2.size() != static_cast<Eigen::Index>(sys.q2())) {
    throw ConfigError("em_step: dimension mismatch");
  }
  Vector noise = Vector::Zero(sys.m());
  for (std::size_t i = 0; i < sys.q1(); ++i) noise += sys.F[i] * x * dW1[i];
  for (std::size_t i = 0; i < sys.q2(); ++i) noise += sys.G[i] * u * dW2[i];
  return x + (sys.A * x + sys.B * u) * h + sys.B * noise;
}

/// One simulated run sampled every h. Column j of `states` is x(t0 + j h);
/// the per-step quantities have one column fewer than `states`.
struct Trajectory {
  double h = 0.0;
  double t0 = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t path = 0;
  Matrix states;       // n x (N + 1)
  Matrix inputs;       // m x N
  Matrix dw_hat;       // m x N
  Matrix exploration;  // m x N, e(t_j) as applied
  Matrix dW1;          // q1 x N
  Matrix dW2;          // q2 x N
  std::vector<std::string> diagnostics;

  Eigen::Index steps() const { return inputs.cols(); }
  double time(Eigen::Index j) const {
    return t0 + static_cast<double>(j) * h;
  }
};

/// Number of h-steps in `duration`; throws unless it is a positive integer.
inline Eigen::Index steps_in(double duration, double h, const char* who) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw ConfigError(std::string(who) + ": h must be positive");
  }
  const double ratio = duration / h;
  const double rounded = std::round(ratio);
  if (!(rounded >= 1.0) || std::abs(ratio - rounded) > 1e-9 * rounded) {
    std::ostringstream msg;
    msg << who << ": duration " << duration
        << " is not a positive integer multiple of h = " << h;
    throw ConfigError(msg.str());
  }
  return static_cast<Eigen::Index>(rounded);
}

/// Draws x(0) ~ N(mean, covariance) for one path.
inline Vector draw_initial_state(const InitialStateSpec& spec,
                                 const CounterNormal& rng,
                                 std::uint32_t path) {
  const Eigen::Index n = spec.mean.size();
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    z[i] = rng.normal(path, 0, Stream::kInitialState,
                      static_cast<std::uint32_t>(i));
  }
  // Eigen-decomposition square root tolerates a singular covariance.
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(spec.covariance));
  const Vector lambda = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return spec.mean + es.eigenvectors() * (lambda.asDiagonal() * z);
}

/// One Euler-Maruyama step of the closed loop u = -Kx + e on plain arrays:
///   x' = x + A x h + B (u h + noise),
///   noise = sum F_i x dW1_i + sum G_i u dW2_i.
class EulerKernel {
 public:
  EulerKernel(const LinearStochasticSystem& sys, const Matrix& K, double h)
      : A_(sys.A), B_(sys.B), K_(K), F_(sys.F.begin(), sys.F.end()),
        G_(sys.G.begin(), sys.G.end()), h_(h), sqrt_h_(std::sqrt(h)) {}

  void control(const Vector& x, const Vector& e, Vector& u) const {
    u = e;
    matvec_add(K_, x.data(), -1.0, u.data());
  }

  /// Brownian increments for one step; channels come in Box-Muller pairs.
  void draw(const CounterNormal& rng, std::uint32_t path, std::uint64_t step,
            Vector& dw1, Vector& dw2) const {
    fill(rng, path, step, Stream::kBrownianState, dw1);
    fill(rng, path, step, Stream::kBrownianControl, dw2);
  }

  void noise(const Vector& x, const Vector& u, const Vector& dw1,
             const Vector& dw2, Vector& out) const {
    out.setZero();
    for (std::size_t i = 0; i < F_.size(); ++i) {
      matvec_add(F_[i], x.data(), dw1[static_cast<Eigen::Index>(i)],
                 out.data());
    }
    for (std::size_t i = 0; i < G_.size(); ++i) {
      matvec_add(G_[i], u.data(), dw2[static_cast<Eigen::Index>(i)],
                 out.data());
    }
  }

  /// `scratch` must have length m.
  void advance(const Vector& x, const Vector& u, const Vector& noise,
               Vector& out, Vector& scratch) const {
    for (Eigen::Index c = 0; c < scratch.size(); ++c) {
      scratch[c] = u[c] * h_ + noise[c];
    }
    out = x;
    matvec_add(A_, x.data(), h_, out.data());
    matvec_add(B_, scratch.data(), 1.0, out.data());
  }

 private:
  using RowMajor =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static void matvec_add(const RowMajor& M, const double* in, double scale,
                         double* out) {
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      const double* row = M.data() + r * M.cols();
      double acc = 0.0;
      for (Eigen::Index c = 0; c < M.cols(); ++c) acc += row[c] * in[c];
      out[r] += scale * acc;
    }
  }

  void fill(const CounterNormal& rng, std::uint32_t path, std::uint64_t step,
            Stream stream, Vector& out) const {
    for (Eigen::Index i = 0; i < out.size(); i += 2) {
      const auto p =
          rng.pair(path, step, stream, static_cast<std::uint32_t>(i / 2));
      out[i] = sqrt_h_ * p[0];
      if (i + 1 < out.size()) out[i + 1] = sqrt_h_ * p[1];
    }
  }

  RowMajor A_, B_, K_;
  std::vector<RowMajor> F_, G_;
  double h_, sqrt_h_;
};

struct SimulateOptions {
  std::uint32_t path = 0;
  bool check_admissibility = true;
  double divergence_bound = 1e8;
  // Precomputed deterministic exploration (m x N); computed when null.
  const Matrix* exploration = nullptr;
};

namespace detail {

// Shared Euler loop. `draw(step, dw1, dw2)` supplies the Brownian increments;
// `dither(step, c)` the standard normal for exploration channel c.
template <class Draw, class Dither>
Trajectory simulate_core(const LinearStochasticSystem& sys, const Matrix& K,
                         const ExplorationSignal& explore, const Vector& x0,
                         double t0, Eigen::Index N, double h,
                         const SimulateOptions& opts, Draw&& draw,
                         Dither&& dither_normal) {
  const Eigen::Index n = sys.n();
  const Eigen::Index m = sys.m();
  const auto q1 = static_cast<Eigen::Index>(sys.q1());
  const auto q2 = static_cast<Eigen::Index>(sys.q2());
  if (K.rows() != m || K.cols() != n) {
    throw ConfigError("simulate: gain is " + shape_of(K) + ", expected " +
                      std::to_string(m) + "x" + std::to_string(n));
  }
  if (x0.size() != n) throw ConfigError("simulate: x0 has wrong length");
  validate_exploration(explore, m);

  Trajectory tr;
  tr.h = h;
  tr.t0 = t0;
  tr.path = opts.path;
  if (opts.check_admissibility) {
    const auto stab = mean_square_stability(sys, K);
    if (!stab.is_stable) {
      std::ostringstream msg;
      msg << "gain is not mean-square admissible (spectral abscissa "
          << stab.spectral_abscissa << ")";
      tr.diagnostics.push_back(msg.str());
    }
  }
  Matrix table_storage;
  const Matrix* table = opts.exploration;
  if (table == nullptr) {
    table_storage = exploration_table(explore, m, t0, h, N);
    table = &table_storage;
  } else if (table->rows() != m || table->cols() < N) {
    throw ConfigError("simulate: exploration table too small");
  }

  tr.states.resize(n, N + 1);
  tr.inputs.resize(m, N);
  tr.dw_hat.resize(m, N);
  tr.exploration.resize(m, N);
  tr.dW1.resize(q1, N);
  tr.dW2.resize(q2, N);

  const bool dither = explore.noise_std > 0.0 &&
                      explore.kind != ExplorationSignal::Kind::kZero;
  const EulerKernel kernel(sys, K, h);
  Vector x = x0, xn(n);
  Vector u(m), e(m), noise(m), scratch(m), dw1(q1), dw2(q2);
  tr.states.col(0) = x;
  for (Eigen::Index j = 0; j < N; ++j) {
    e = table->col(j);
    if (dither) {
      for (Eigen::Index c = 0; c < m; ++c) {
        e[c] += explore.noise_std * dither_normal(j, c);
      }
    }
    kernel.control(x, e, u);
    draw(j, dw1, dw2);
    if (q1 > 0) tr.dW1.col(j) = dw1;
    if (q2 > 0) tr.dW2.col(j) = dw2;
    kernel.noise(x, u, dw1, dw2, noise);
    tr.inputs.col(j) = u;
    tr.exploration.col(j) = e;
    tr.dw_hat.col(j) = e * h + noise;
    kernel.advance(x, u, noise, xn, scratch);
    x.swap(xn);
    if (!x.allFinite() || x.norm() > opts.divergence_bound) {
      std::ostringstream msg;
      msg << "simulate: state diverged at step " << (j + 1) << " (path "
          << opts.path << ", |x| = " << x.norm() << ")";
      throw NumericalError(msg.str());
    }
    tr.states.col(j + 1) = x;
  }
  return tr;
}

}  // namespace detail

inline Trajectory simulate(const LinearStochasticSystem& sys, const Matrix& K,
                           const ExplorationSignal& explore, const Vector& x0,
                           double t0, double duration, double h,
                           std::uint64_t seed, const SimulateOptions& opts = {}) {
  const Eigen::Index N = steps_in(duration, h, "simulate");
  const CounterNormal rng(seed);
  const EulerKernel kernel(sys, K, h);
  Trajectory tr = detail::simulate_core(
      sys, K, explore, x0, t0, N, h, opts,
      [&](Eigen::Index j, Vector& dw1, Vector& dw2) {
        kernel.draw(rng, opts.path, static_cast<std::uint64_t>(j), dw1, dw2);
      },
      [&](Eigen::Index j, Eigen::Index c) {
        return rng.normal(opts.path, static_cast<std::uint64_t>(j),
                          Stream::kDither, static_cast<std::uint32_t>(c));
      });
  tr.seed = seed;
  return tr;
}

/// Same recursion driven by caller-supplied increments (q1 x N and q2 x N),
/// e.g. fine-grid increments summed with coarsen_increments. Gaussian
/// dither is rejected since it would need its own coupling.
inline Trajectory simulate_with_increments(const LinearStochasticSystem& sys,
                                           const Matrix& K,
                                           const ExplorationSignal& explore,
                                           const Vector& x0, double t0,
                                           double h, const Matrix& dW1,
                                           const Matrix& dW2,
                                           const SimulateOptions& opts = {}) {
  if (!(h > 0.0)) throw ConfigError("simulate: h must be positive");
  if (dW1.rows() != static_cast<Eigen::Index>(sys.q1()) ||
      dW2.rows() != static_cast<Eigen::Index>(sys.q2()) ||
      dW1.cols() != dW2.cols() || dW1.cols() < 1) {
    throw ConfigError("simulate: increment matrices have wrong shape");
  }
  if (explore.noise_std > 0.0 &&
      explore.kind != ExplorationSignal::Kind::kZero) {
    throw ConfigError("simulate: dither is not supported with supplied "
                      "increments");
  }
  return detail::simulate_core(
      sys, K, explore, x0, t0, dW1.cols(), h, opts,
      [&](Eigen::Index j, Vector& dw1, Vector& dw2) {
        dw1 = dW1.col(j);
        dw2 = dW2.col(j);
      },
      [](Eigen::Index, Eigen::Index) { return 0.0; });
}

/// Sums consecutive blocks of `factor` columns: increments on a grid of
/// step h become increments on step factor * h over the same path.
inline Matrix coarsen_increments(const Matrix& dW, Eigen::Index factor) {
  if (factor < 1 || dW.cols() % factor != 0) {
    throw ConfigError("coarsen_increments: factor must divide the step count");
  }
  Matrix out(dW.rows(), dW.cols() / factor);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    out.col(j) = dW.middleCols(j * factor, factor).rowwise().sum();
  }
  return out;
}

/// CSV with columns t, x1..xn, u1..um, dwhat1..dwhatm. The final row holds
/// the terminal state only.
inline void write_trajectory_csv(const Trajectory& tr, std::ostream& os) {
  const Eigen::Index n = tr.states.rows();
  const Eigen::Index m = tr.inputs.rows();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",x" << (i + 1);
  for (Eigen::Index i = 0; i < m; ++i) os << ",u" << (i + 1);
  for (Eigen::Index i = 0; i < m; ++i) os << ",dwhat" << (i + 1);
  os << "\n";
  os.precision(17);
  for (Eigen::Index j = 0; j <= tr.steps(); ++j) {
    os << tr.time(j);
    for (Eigen::Index i = 0; i < n; ++i) os << "," << tr.states(i, j);
    for (Eigen::Index i = 0; i < m; ++i) {
      os << ",";
      if (j < tr.steps()) os << tr.inputs(i, j);
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      os << ",";
      if (j < tr.steps()) os << tr.dw_hat(i, j);
    }
    os << "\n";
  }
}

}  // namespace stochadp

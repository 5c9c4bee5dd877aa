#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "stochadp/harness.hpp"
#include "stochadp/report.hpp"
#include "systems.hpp"

namespace stochadp {
namespace {

using testing::scalar_system;

TEST(ExpectedCostExact, Examples) {
  const Matrix P = Eigen::Vector2d(1, 2).asDiagonal();
  EXPECT_EQ(expected_cost_exact(P, Matrix::Identity(2, 2)), 3.0);
  EXPECT_EQ(expected_cost_exact(P, Matrix::Zero(2, 2)), 0.0);
  PhiloxEngine eng(2);
  const Matrix A = symmetrize(testing::random_matrix(eng, 4, 4));
  const Matrix B = symmetrize(testing::random_matrix(eng, 4, 4));
  double sum = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) sum += A(i, j) * B(i, j);
  }
  EXPECT_NEAR(expected_cost_exact(A, B), sum, 1e-13);
  EXPECT_THROW(expected_cost_exact(A, Matrix::Identity(3, 3)), ConfigError);
}

TEST(ExpectedCostMc, ZeroInitialStateCostsNothing) {
  const auto s = scalar_system(-1, 1, 1, 1);
  const InitialStateSpec x0{Vector::Zero(1), Matrix::Zero(1, 1)};
  const auto c = expected_cost_mc(s, Matrix::Zero(1, 1), x0, 5, 0.01, 10, 1);
  EXPECT_EQ(c.estimate, 0.0);
  EXPECT_EQ(c.stderr_, 0.0);
}

TEST(ExpectedCostMc, ScalarClosedFormIntegral) {
  // K = 0: cost = x0^2 int e^{-2t} dt = x0^2 / 2.
  const auto s = scalar_system(-1, 1, 1, 1);
  const InitialStateSpec x0{Vector::Constant(1, 2.0), Matrix::Zero(1, 1)};
  const auto c = expected_cost_mc(s, Matrix::Zero(1, 1), x0,
                                  cost_horizon(s, Matrix::Zero(1, 1), 16),
                                  1e-4, 4, 1);
  EXPECT_NEAR(c.estimate, 2.0, 4 * 1e-4);
}

TEST(ExpectedCostMc, MatchesLyapunovValue) {
  const auto s = testing::random_stable_system(2, 1, 71, 0.4);
  const InitialStateSpec x0{Vector::Zero(2), Matrix::Identity(2, 2)};
  const Matrix K = lqr_initial_gain(s);
  const Matrix P = kleinman_step(s, K).first;
  const auto c = expected_cost_mc(s, K, x0, cost_horizon(s, K), 1e-3, 4000, 5);
  EXPECT_LE(std::abs(c.estimate - expected_cost_exact(P, x0.covariance)),
            3 * c.stderr_);
  EXPECT_GT(c.stderr_, 0.0);
}

TEST(ExpectedCostMc, UnstableGainIsNumericalError) {
  const auto s = scalar_system(1, 1, 1, 1);
  const InitialStateSpec x0{Vector::Zero(1), Matrix::Identity(1, 1)};
  EXPECT_THROW(expected_cost_mc(s, Matrix::Zero(1, 1), x0, 5, 0.01, 10, 1),
               NumericalError);
  EXPECT_THROW(cost_horizon(s, Matrix::Zero(1, 1)), NumericalError);
}

SweepRecord point(double h, double err) {
  SweepRecord r;
  r.h = h;
  r.err_P = err;
  return r;
}

TEST(FitRate, ExactPowerLaws) {
  std::vector<SweepRecord> lin, quad;
  for (double h : {0.04, 0.02, 0.01, 0.005}) {
    lin.push_back(point(h, 3 * h));
    quad.push_back(point(h, h * h));
  }
  const auto f = fit_rate(lin, FitField::kErrP);
  EXPECT_NEAR(f.slope, 1.0, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  EXPECT_EQ(f.points_used, 4);
  EXPECT_NEAR(fit_rate(quad, FitField::kErrP).slope, 2.0, 1e-12);
}

TEST(FitRate, NoisyLinear) {
  PhiloxEngine eng(8);
  std::vector<SweepRecord> recs;
  double h = 0.08;
  for (int i = 0; i < 8; ++i, h /= 2) {
    recs.push_back(point(h, 3 * h * (1 + 0.05 * eng.normal())));
  }
  const auto f = fit_rate(recs, FitField::kErrP);
  EXPECT_GE(f.slope, 0.85);
  EXPECT_LE(f.slope, 1.15);
}

TEST(FitRate, Errors) {
  std::vector<SweepRecord> recs{point(0.1, 1), point(0.05, 0), point(0.02, 1)};
  EXPECT_THROW(fit_rate(recs, FitField::kErrP), ConfigError);
  recs.pop_back();
  recs[1].err_P = 0.5;
  EXPECT_THROW(fit_rate(recs, FitField::kErrP), ConfigError);
}

TEST(FitRate, SkipsFailedRecords) {
  std::vector<SweepRecord> recs;
  for (double h : {0.04, 0.02, 0.01, 0.005}) recs.push_back(point(h, 2 * h));
  recs[1].error = "boom";
  recs[1].err_P = 100;
  const auto f = fit_rate(recs, FitField::kErrP);
  EXPECT_EQ(f.points_used, 3);
  EXPECT_NEAR(f.slope, 1.0, 1e-12);
}

TEST(FitLinear, CostLineAndIntercept) {
  std::vector<SweepRecord> recs;
  for (double h : {0.04, 0.02, 0.01, 0.005}) {
    SweepRecord r = point(h, h);
    r.J_E_exact = 30 + 5 * h;
    r.J_E_hat = 31 + 2 * h;
    recs.push_back(r);
  }
  const auto f = fit_linear(recs, CostField::kJEExact);
  EXPECT_NEAR(f.slope, 5.0, 1e-10);
  EXPECT_NEAR(f.intercept, 30.0, 1e-12);
  const auto g = fit_rate(recs, FitField::kJEHatMinusIntercept);
  EXPECT_NEAR(g.slope, 1.0, 1e-8);
}

TEST(SweepConfig, Preconditions) {
  SweepConfig c;
  EXPECT_NO_THROW(validate_sweep_config(c, 6, 2));
  c.h_list = {0.02, 0.01, 0.005};
  EXPECT_THROW(validate_sweep_config(c, 6, 2), ConfigError);
  c.h_list = {0.04, 0.03, 0.02, 0.01};
  EXPECT_THROW(validate_sweep_config(c, 6, 2), ConfigError);
  c.h_list = {0.04, 0.02, 0.01, 0.003};
  EXPECT_THROW(validate_sweep_config(c, 6, 2), ConfigError);
  c.h_list = {0.04, 0.02, 0.01, -0.004};
  EXPECT_THROW(validate_sweep_config(c, 6, 2), ConfigError);
}

SweepConfig scalar_sweep() {
  SweepConfig c;
  c.h_list = {0.02, 0.01, 0.01, 0.002};
  c.adp.explore = default_exploration(1);
  c.adp.l = 12;  // a square Theta makes the estimator heavy-tailed
  c.n_mc_initial = 64;
  c.n_mc_cap = 256;
  c.cost_paths = 40;
  c.cost_h_sim = 0.01;
  c.cost_time_constants = 4;
  return c;
}

TEST(SweepH, NoiseFreeContinuousExpectationsAreExact) {
  const auto s = testing::random_stable_system(2, 1, 81, 0.0);
  LinearStochasticSystem quiet = s;
  quiet.F.clear();
  quiet.G.clear();
  SweepConfig c;
  c.mode = ExpectationMode::kContinuousExact;
  c.adp.explore = default_exploration(1);
  c.cost_paths = 0;
  const auto res = sweep_h(quiet, {Vector::Zero(2), Matrix::Identity(2, 2)}, c);
  ASSERT_EQ(res.records.size(), 6u);
  for (const auto& r : res.records) {
    ASSERT_TRUE(r.ok()) << r.error;
    EXPECT_LT(r.err_P, 1e-8);
    EXPECT_TRUE(std::isnan(r.J_E_hat));
  }
}

TEST(SweepH, DuplicateStepsAgreeWithinMonteCarloError) {
  const auto s = scalar_system(-1, 1, 1, 1, {0.3}, {0.3});
  const auto res = sweep_h(s, {Vector::Zero(1), Matrix::Identity(1, 1)},
                           scalar_sweep());
  const auto& a = res.records[1];
  const auto& b = res.records[2];
  ASSERT_EQ(a.h, b.h);
  EXPECT_NE(a.seed, b.seed);
  EXPECT_LE(std::abs(a.err_P - b.err_P),
            3 * std::hypot(a.mc_stderr, b.mc_stderr));
}

TEST(SweepH, FailuresStayInTheirRow) {
  const auto s = scalar_system(-1, 1, 1, 1, {0.3}, {0.3});
  auto c = scalar_sweep();
  c.adp.explore = {};
  const auto res = sweep_h(s, {Vector::Zero(1), Matrix::Zero(1, 1)}, c);
  ASSERT_EQ(res.records.size(), 4u);
  for (const auto& r : res.records) {
    EXPECT_FALSE(r.ok());
    EXPECT_NE(r.error.find("persistent excitation"), std::string::npos);
  }
}

std::string serialize(const SweepResult& res, const SweepConfig& c) {
  std::ostringstream os;
  write_sweep_csv(res.records, os, false);
  os << sweep_summary_json(res, compute_fits(res.records), c, {}).dump(2);
  return os.str();
}

TEST(HarnessProperty, SweepIsReproducibleAcrossThreadCounts) {
  const auto s = scalar_system(-1, 1, 1, 1, {0.3}, {0.3});
  const InitialStateSpec x0{Vector::Zero(1), Matrix::Identity(1, 1)};
  auto c = scalar_sweep();
  c.h_list = {0.02, 0.01, 0.004, 0.002};
  const std::string first = serialize(sweep_h(s, x0, c), c);
  EXPECT_EQ(first, serialize(sweep_h(s, x0, c), c));
  c.threads = 4;
  EXPECT_EQ(first, serialize(sweep_h(s, x0, c), c));
}

class ArmExactSweep : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto arm = sensorimotor_arm();
    SweepConfig c;
    c.mode = ExpectationMode::kEulerExact;
    c.adp.explore = default_exploration(2);
    c.cost_paths = 0;
    result_ = new SweepResult(sweep_h(arm.system, arm.initial_state, c));
  }
  static void TearDownTestSuite() { delete result_; }
  static SweepResult* result_;
};
SweepResult* ArmExactSweep::result_ = nullptr;

TEST_F(ArmExactSweep, HarnessPropertyCostApproachesOptimum) {
  const auto& recs = result_->records;
  for (std::size_t i = 1; i < recs.size(); ++i) {
    ASSERT_LT(recs[i].h, recs[i - 1].h);
    EXPECT_LT(std::abs(recs[i].J_E_exact - result_->J_star),
              std::abs(recs[i - 1].J_E_exact - result_->J_star));
  }
}

TEST_F(ArmExactSweep, HarnessPropertyValueErrorIsFirstOrder) {
  const auto f = fit_rate(result_->records, FitField::kErrP);
  EXPECT_GE(f.slope, 0.8);
  EXPECT_LE(f.slope, 1.3);
  EXPECT_GE(f.r_squared, 0.9);
}

}  // namespace
}  // namespace stochadp

#include <gtest/gtest.h>

#include <algorithm>
#include <string>

#include "stochadp/model.hpp"
#include "stochadp/riccati.hpp"
#include "systems.hpp"

namespace stochadp {
namespace {

bool mentions(const std::vector<std::string>& diags, const std::string& s) {
  return std::any_of(diags.begin(), diags.end(), [&](const std::string& d) {
    return d.find(s) != std::string::npos;
  });
}

TEST(Validate, AcceptsWellFormedSystem) {
  EXPECT_TRUE(validate(testing::scalar_system(-1, 1, 1, 1, {0.1}, {0.2})).empty());
  EXPECT_TRUE(validate(sensorimotor_arm().system).empty());
}

TEST(Validate, ReportsEachProblem) {
  auto s = testing::scalar_system(-1, 1, 1, -1);
  EXPECT_TRUE(mentions(validate(s), "R not positive definite"));
  EXPECT_THROW(require_valid(s), ConfigError);

  s = testing::random_stable_system(3, 2, 5);
  s.Q(0, 1) = 5.0;
  EXPECT_TRUE(mentions(validate(s), "Q not symmetric"));

  s = testing::random_stable_system(3, 2, 5);
  s.B = Matrix::Zero(2, 2);
  EXPECT_TRUE(mentions(validate(s), "B is 2x2"));

  s = testing::random_stable_system(3, 2, 5);
  s.G.push_back(Matrix::Zero(3, 3));
  EXPECT_TRUE(mentions(validate(s), "G[1] is 3x3"));

  s = testing::random_stable_system(3, 2, 5);
  s.A(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(validate(s).empty());
}

TEST(Validate, InitialState) {
  InitialStateSpec x0{Vector::Zero(2), Matrix::Identity(2, 2)};
  EXPECT_TRUE(validate(x0, 2).empty());
  EXPECT_FALSE(validate(x0, 3).empty());
  x0.covariance(0, 0) = -1.0;
  EXPECT_TRUE(mentions(validate(x0, 2), "not positive semidefinite"));
}

TEST(ArmPreset, Structure) {
  const ArmModel arm = sensorimotor_arm();
  const auto& s = arm.system;
  EXPECT_EQ(s.n(), 6);
  EXPECT_EQ(s.m(), 2);
  EXPECT_EQ(s.q1(), 0u);
  EXPECT_EQ(s.q2(), 2u);
  // Position integrates velocity; activation is a first-order filter of u.
  EXPECT_EQ(s.A(0, 2), 1.0);
  EXPECT_EQ(s.A(4, 4), -1.0 / 0.05);
  EXPECT_EQ(s.B(4, 0), 1.0 / 0.05);
  EXPECT_EQ(s.G[0](0, 0), 0.075);
  EXPECT_EQ(s.G[0](1, 0), 0.025);
  EXPECT_EQ(arm.initial_state.covariance, Matrix::Identity(6, 6));
}

TEST(ArmPreset, RejectsBadParameters) {
  ArmParams p;
  p.mass = 0.0;
  EXPECT_THROW(sensorimotor_arm(p), ConfigError);
  p = {};
  p.force_field = Matrix::Zero(3, 3);
  EXPECT_THROW(sensorimotor_arm(p), ConfigError);
  p = {};
  p.R = -Matrix::Identity(2, 2);
  EXPECT_THROW(sensorimotor_arm(p), ConfigError);
}

TEST(ModelProperty, OptimalGainIsAdmissible) {
  std::vector<LinearStochasticSystem> systems{sensorimotor_arm().system};
  for (int seed = 0; seed < 5; ++seed) {
    systems.push_back(testing::random_stable_system(2 + seed % 3, 1 + seed % 2,
                                                    seed + 11));
  }
  for (const auto& s : systems) {
    const auto sol = solve(s, lqr_initial_gain(s));
    EXPECT_TRUE(check_admissible(s, sol.K_star).is_stable);
  }
}

TEST(ModelProperty, NoiseFreeArmMatchesDeterministicLqr) {
  ArmParams p;
  p.c1 = 0.0;
  p.c2 = 0.0;
  const auto s = sensorimotor_arm(p).system;
  const auto sol = solve(s, lqr_initial_gain(s));
  const Matrix X = testing::care_by_eigenvectors(s.A, s.B, s.Q, s.R);
  EXPECT_LE((sol.P_star - X).norm(), 1e-9 * X.norm());
}

}  // namespace
}  // namespace stochadp

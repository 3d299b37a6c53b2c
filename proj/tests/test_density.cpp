#include "hypodens/density.hpp"
#include "hypodens/rng.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace hypodens;

namespace {

DensityEstimate normal_samples(int n, std::size_t count, std::uint64_t seed) {
  NormalStream g(seed);
  DensityEstimate e;
  e.samples.resize(n, static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k)
    for (int i = 0; i < n; ++i) e.samples(i, static_cast<Eigen::Index>(k)) = g();
  e.set_bandwidth();
  return e;
}

}  // namespace

TEST(Kde, StandardNormalAtOrigin) {
  for (int n = 1; n <= 3; ++n) {
    const auto e = normal_samples(n, 100000, 10 + n);
    const double truth = std::pow(2 * std::numbers::pi, -0.5 * n);
    EXPECT_NEAR(e.evaluate(Vector::Zero(n)), truth, 0.05 * truth);
  }
}

TEST(Kde, SymmetryAndPositivity) {
  auto e = normal_samples(2, 2000, 3);
  Matrix both(2, 4000);
  both << e.samples, -e.samples;
  e.samples = both;
  e.set_bandwidth();
  Vector z(2);
  z << 0.4, -1.1;
  EXPECT_NEAR(e.evaluate(z), e.evaluate(-z), 1e-14);
  z << 50, 50;
  EXPECT_GE(e.evaluate(z), 0.0);
}

TEST(Kde, FreeFunctionMatchesEstimate) {
  const auto e = normal_samples(2, 500, 4);
  Vector z(2);
  z << 0.2, 0.1;
  EXPECT_DOUBLE_EQ(kde_density(e.samples, z), e.evaluate(z));
  EXPECT_THROW(kde_density(Matrix::Zero(2, 1), z), ArgumentError);
}

TEST(Sampling, EllipticIsStandardNormal) {
  auto m = builtin::elliptic(2);
  const std::size_t n = 20000;
  const auto est = sample_scaled_endpoints(*m, Vector::Zero(2), 0.1, n, 5, 16);
  const Matrix c = est.sample_covariance();
  const double se = std::sqrt(2.0 / n);
  EXPECT_NEAR(c(0, 0), 1.0, 3 * se);
  EXPECT_NEAR(c(1, 1), 1.0, 3 * se);
  EXPECT_NEAR(c(0, 1), 0.0, 3 / std::sqrt(static_cast<double>(n)));
}

TEST(Sampling, ChangeOfVariables) {
  auto m = builtin::heisenberg();
  const auto est = sample_scaled_endpoints(*m, Vector::Zero(3), 0.05, 2000, 6, 16);
  Vector z(3);
  z << 0.1, -0.2, 0.3;
  const Vector y = est.center + est.alpha.apply(z);
  EXPECT_NEAR(est.evaluate_original(y) * est.det_alpha, est.evaluate(z), 1e-12 * est.evaluate(z));
}

TEST(Sampling, CenteringShiftsByDrift) {
  Vector b(3);
  b << 1.0, 0.0, 0.0;
  auto m = builtin::heisenberg(b, "heisenberg-drift");
  const double delta = 0.05;
  const auto a = sample_scaled_endpoints(*m, Vector::Zero(3), delta, 500, 7, 16, Centering::X0);
  const auto c = sample_scaled_endpoints(*m, Vector::Zero(3), delta, 500, 7, 16, Centering::X0PlusBDelta);
  const Vector shift = c.alpha.inverse_apply(b * delta);
  EXPECT_LT((a.sample_mean() - c.sample_mean() - shift).norm(), 1e-12);
}

TEST(Sampling, HeisenbergThirdCoordinateDoesNotDegenerate) {
  auto m = builtin::heisenberg();
  for (double delta : {0.02, 0.2}) {
    const auto est = sample_scaled_endpoints(*m, Vector::Zero(3), delta, 20000, 8, 32);
    const Matrix c = est.sample_covariance();
    EXPECT_NEAR(c(0, 0), 1.0, 0.05);
    // (1/2) Levy area over [0,1] scaled by 1/sqrt(2): variance 1/8
    EXPECT_NEAR(c(2, 2), 0.125, 0.015);
  }
}

TEST(Sampling, IndependentOfWorkerCount) {
  auto m = builtin::grushin();
  setenv("HYPODENS_THREADS", "1", 1);
  const auto a = sample_scaled_endpoints(*m, Vector::Zero(2), 0.1, 300, 9, 16);
  setenv("HYPODENS_THREADS", "4", 1);
  const auto b = sample_scaled_endpoints(*m, Vector::Zero(2), 0.1, 300, 9, 16);
  unsetenv("HYPODENS_THREADS");
  EXPECT_EQ(a.samples, b.samples);
}

TEST(BallMesh, InsideUnitBallAndDeterministic) {
  const auto m1 = ball_mesh(3, 200);
  const auto m2 = ball_mesh(3, 200);
  ASSERT_EQ(m1.size(), 200u);
  for (std::size_t i = 0; i < m1.size(); ++i) {
    EXPECT_LE(m1[i].norm(), 1.0);
    EXPECT_EQ(m1[i], m2[i]);
  }
  EXPECT_THROW(ball_mesh(3, 0), ConfigError);
}

TEST(DiagonalExponent, NeedsFourDeltas) {
  auto m = builtin::elliptic(2);
  EXPECT_THROW(diagonal_exponent(*m, Vector::Zero(2), {0.1, 0.2, 0.3}, 100, 1, 16), ArgumentError);
}

TEST(DiagonalExponent, EllipticSlope) {
  auto m = builtin::elliptic(2);
  const auto de = diagonal_exponent(*m, Vector::Zero(2), {0.02, 0.05, 0.1, 0.2}, 20000, 10, 16);
  EXPECT_DOUBLE_EQ(de.expected, -1.0);
  EXPECT_NEAR(de.fit.slope, -1.0, 0.1);
}

TEST(LowerBound, ZeroRadiusIsDiagonalValue) {
  auto m = builtin::heisenberg();
  const auto est = sample_scaled_endpoints(*m, Vector::Zero(3), 0.1, 3000, 11, 16);
  const auto lb = lower_bound_stat(est, 0.0, 2.0, 10);
  EXPECT_NEAR(lb.min_normalized, 0.01 * diagonal_value(est), 1e-12 * lb.min_normalized);
  EXPECT_THROW(lower_bound_stat(est, -1.0, 2.0), ConfigError);
}

TEST(Tail, CenterRowIsDiagonalValue) {
  auto m = builtin::heisenberg();
  const auto est = sample_scaled_endpoints(*m, Vector::Zero(3), 0.1, 3000, 12, 16);
  const auto t = tail_stat(est, Vector::Zero(3), Vector::Zero(3), 4.0, 2.0, 3.0, 20);
  ASSERT_FALSE(t.mesh.empty());
  EXPECT_EQ(t.mesh[0].norm_a_delta, 0.0);
  EXPECT_NEAR(t.mesh[0].normalized_stat, 0.01 * diagonal_value(est), 1e-12);
  EXPECT_DOUBLE_EQ(t.recenter_ratio, 1.0);
  EXPECT_THROW(tail_stat(est, Vector::Zero(3), Vector::Zero(3), 1.0, 2.0), ArgumentError);
}

TEST(Tail, RecenteringNormIsBounded) {
  Vector b(3);
  b << 1.0, 0.5, 0.0;
  auto m = builtin::heisenberg(b, "heisenberg-drift");
  for (double delta : {0.01, 0.1, 0.2}) {
    const auto ad = scale_matrix(directional_matrix(*m, 0.0, Vector::Zero(3)), delta);
    EXPECT_LE(aniso_norm(ad, b * delta), b.norm() * std::sqrt(delta) + 1e-12);
  }
}

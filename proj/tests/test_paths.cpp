#include "hypodens/paths.hpp"
#include "hypodens/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hypodens;

TEST(Rng, StreamsAreDeterministicAndDistinct) {
  Xoshiro256 a(stream_seed(7, 0)), b(stream_seed(7, 0)), c(stream_seed(7, 1));
  bool differ = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a(), y = b(), z = c();
    EXPECT_EQ(x, y);
    differ = differ || x != z;
  }
  EXPECT_TRUE(differ);
}

TEST(SamplePath, Deterministic) {
  const auto p1 = sample_path(42, 2, 0.1, 16);
  const auto p2 = sample_path(42, 2, 0.1, 16);
  EXPECT_EQ(p1.values, p2.values);
  EXPECT_NE(p1.values, sample_path(43, 2, 0.1, 16).values);
  EXPECT_EQ(p1.values.rows(), 33);
  EXPECT_EQ(p1.values.row(0).norm(), 0.0);
  EXPECT_EQ(p1.sub_index(1), 16);
  EXPECT_DOUBLE_EQ(p1.time(p1.sub_index(1)), 0.05);
}

TEST(SamplePath, RejectsBadArguments) {
  EXPECT_THROW(sample_path(1, 0, 0.1, 16), ArgumentError);
  EXPECT_THROW(sample_path(1, 2, 0.0, 16), ArgumentError);
  EXPECT_THROW(sample_path(1, 2, 0.1, 4), ArgumentError);
}

TEST(SamplePath, EndpointVariance) {
  const int n = 100000, d = 2;
  const double delta = 0.3;
  std::vector<double> w0(n), w1(n);
  for (int k = 0; k < n; ++k) {
    const auto p = sample_path(stream_seed(5, k), d, delta, 8);
    w0[k] = p.endpoint()[0];
    w1[k] = p.endpoint()[1];
  }
  // SE of the sample variance of a normal is delta*sqrt(2/n)
  const double se = delta * std::sqrt(2.0 / n);
  EXPECT_NEAR(variance(w0), delta, 3 * se);
  EXPECT_NEAR(variance(w1), delta, 3 * se);
}

TEST(SamplePath, CoarsenKeepsGridPoints) {
  const auto p = sample_path(3, 2, 0.1, 64);
  const auto c = p.coarsen(4);
  EXPECT_EQ(c.steps_per_sub, 16);
  EXPECT_EQ(c.endpoint(), p.endpoint());
  EXPECT_EQ(c.values.row(c.sub_index(1)), p.values.row(p.sub_index(1)));
  EXPECT_THROW(p.coarsen(3), ArgumentError);
}

TEST(IteratedIntegrals, LevyAreaSecondMoment) {
  const int n = 100000, d = 2;
  const double delta = 0.2, h = delta / d;
  std::vector<double> v;
  v.reserve(n);
  for (int k = 0; k < n; ++k) {
    const auto ii = increments_and_iterated(sample_path(stream_seed(9, k), d, delta, 64));
    v.push_back(ii.iter[0](0, 1) * ii.iter[0](0, 1));
  }
  // E[(int W^0 dW^1)^2] = h^2/2, minus an O(h^2/N) left-point bias
  const double se = std::sqrt(variance(v) / n);
  EXPECT_NEAR(mean(v), h * h / 2, 3 * se + h * h / 64);
}

TEST(IteratedIntegrals, ShuffleAndDiagonal) {
  const auto p = sample_path(4, 3, 0.1, 32);
  const auto ii = increments_and_iterated(p);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 3; ++i) {
      EXPECT_DOUBLE_EQ(ii.iter[k](i, i), 0.5 * ii.inc(k, i) * ii.inc(k, i));
      for (int j = 0; j < 3; ++j)
        if (i != j) {
          // left-point sums satisfy the shuffle relation up to the quadratic covariation defect
          const double s = ii.iter[k](i, j) + ii.iter[k](j, i) - ii.inc(k, i) * ii.inc(k, j);
          EXPECT_LT(std::abs(s), 0.05);
        }
    }
}

TEST(Theta, SingleDriver) {
  const auto p = sample_path(8, 1, 0.4, 16);
  const Vector th = theta_vector(increments_and_iterated(p), 0.4);
  ASSERT_EQ(th.size(), 1);
  EXPECT_NEAR(th[0], p.endpoint()[0] / std::sqrt(0.4), 1e-14);
}

TEST(Theta, DiagonalVariance) {
  const int n = 100000, d = 2;
  std::vector<double> v(n);
  for (int k = 0; k < n; ++k) {
    const auto p = sample_path(stream_seed(10, k), d, 0.05, 8);
    v[k] = theta_vector(increments_and_iterated(p), 0.05)[theta_diag_index(1, d)];
  }
  EXPECT_NEAR(variance(v), 1.0 / d, 3 * (1.0 / d) * std::sqrt(2.0 / n));
}

TEST(ConditionalCovariance, DiagonalEntryExact) {
  for (int d = 1; d <= 3; ++d) {
    const auto q = conditional_covariance(sample_path(d, d, 0.1, 32));
    for (int p = 0; p < d; ++p) EXPECT_EQ(q.blocks[p](p, p), 1.0 / d);
    EXPECT_NEAR(q.det, q.full.determinant(), 1e-12);
  }
}

TEST(ConditionalCovariance, FrozenPathIsDiagonal) {
  const int d = 2;
  Matrix values = Matrix::Zero(2 * 16 + 1, d);
  const auto q = conditional_covariance(path_from_values(values, 0.1, 16));
  for (int p = 0; p < d; ++p) {
    Matrix expect = Matrix::Zero(d, d);
    expect(p, p) = 1.0 / d;
    EXPECT_LT((q.blocks[p] - expect).norm(), 1e-15);
  }
}

TEST(SupportQuantities, FrozenOffCoordinates) {
  const auto base = sample_path(12, 2, 0.1, 32);
  Matrix v = base.values;
  v.col(1).setZero();
  const auto s = support_quantities(path_from_values(v, 0.1, 32));
  EXPECT_EQ(s.q_p[0], 0.0);
}

TEST(SupportQuantities, StableUnderRefinement) {
  const int n = 4000;
  std::vector<double> coarse(n), fine(n);
  for (int k = 0; k < n; ++k) {
    const auto p = sample_path(stream_seed(13, k), 3, 1.0, 256);
    fine[k] = support_quantities(p).q;
    coarse[k] = support_quantities(p.coarsen(4)).q;
  }
  EXPECT_TRUE(std::isfinite(mean(fine)));
  EXPECT_LT(std::abs(mean(fine) - mean(coarse)), 0.05 * mean(fine));
}

TEST(ResampleCoordinate, OnlyTouchesOneColumn) {
  const auto p = sample_path(14, 3, 0.1, 16);
  const auto r = resample_coordinate(p, 1, 99);
  EXPECT_EQ(r.values.col(0), p.values.col(0));
  EXPECT_EQ(r.values.col(2), p.values.col(2));
  EXPECT_NE(r.values.col(1), p.values.col(1));
}

TEST(Mollifier, PiecewiseDefinition) {
  EXPECT_EQ(mollifier(1.0, 0.0), 1.0);
  EXPECT_EQ(mollifier(2.0, -2.0), 1.0);
  EXPECT_EQ(mollifier(1.0, 2.0), 0.0);
  EXPECT_EQ(mollifier(1.0, -5.0), 0.0);
  EXPECT_NEAR(mollifier(1.0, 1.5), std::exp(1 - 1 / (1 - 0.25)), 1e-15);
  EXPECT_EQ(mollifier(0.7, 1.1), mollifier(0.7, -1.1));
  EXPECT_THROW(mollifier(0.0, 1.0), ArgumentError);
  EXPECT_THROW(mollifier(-1.0, 1.0), ArgumentError);
  double prev = 1.0;
  for (int k = 0; k <= 1000; ++k) {
    const double v = mollifier(1.0, 1.0 + k / 1000.0);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Mollifier, LogDerivativeBoundScales) {
  // a^p sup |(ln psi_a)'|^p psi_a does not depend on a
  for (double p : {1.0, 2.0, 4.0}) {
    std::vector<double> vals;
    for (double a : {0.05, 1.0, 20.0}) {
      double sup = 0.0;
      for (int k = 1; k < 4000; ++k) {
        const double u = a * k / 4000.0;
        const double dlog = 2 * a * a * u / std::pow(a * a - u * u, 2);
        sup = std::max(sup, std::pow(dlog, p) * mollifier(a, a + u));
      }
      vals.push_back(std::pow(a, p) * sup);
    }
    EXPECT_NEAR(vals[0], vals[1], 1e-9 * vals[1]);
    EXPECT_NEAR(vals[2], vals[1], 1e-9 * vals[1]);
  }
}

TEST(Localization, LambdaImpliesUnitWeight) {
  const int d = 2;
  int in_lambda = 0;
  for (int k = 0; k < 20000; ++k) {
    const auto p = sample_path(stream_seed(15, k), d, 0.1, 32);
    const auto q = conditional_covariance(p);
    const auto s = support_quantities(p);
    const Vector th = theta_vector(increments_and_iterated(p), 0.1);
    for (double eps : {0.5, 0.7}) {
      const auto w = localization_weights(q, s, th, eps, 8.0, 0.5);
      if (w.in_lambda) {
        ++in_lambda;
        EXPECT_EQ(w.u_tilde, 1.0);
      }
      if (s.q >= 2 * d * eps) EXPECT_EQ(w.u_tilde, 0.0);
      EXPECT_GE(w.u_tilde, 0.0);
      EXPECT_LE(w.u_bar, 1.0);
    }
  }
  EXPECT_GT(in_lambda, 0);
}

TEST(SupportStatistics, GenerousEventIsPositive) {
  SupportConfig cfg;
  cfg.eps_grid = {0.9};
  cfg.rho = 40.0;
  cfg.n_samples = 2000;
  cfg.steps_per_sub = 32;
  const auto st = support_statistics(cfg);
  ASSERT_EQ(st.rows.size(), 1u);
  EXPECT_GT(st.rows[0].upsilon.p_hat, 0.0);
  EXPECT_LE(st.rows[0].upsilon.ci_lo, st.rows[0].upsilon.p_hat);
}

TEST(SupportStatistics, IndependentOfWorkerCount) {
  SupportConfig cfg;
  cfg.n_samples = 3000;
  cfg.steps_per_sub = 16;
  cfg.seed = 77;
  setenv("HYPODENS_THREADS", "1", 1);
  const auto a = support_statistics(cfg);
  setenv("HYPODENS_THREADS", "3", 1);
  const auto b = support_statistics(cfg);
  unsetenv("HYPODENS_THREADS");
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].upsilon.hits, b.rows[i].upsilon.hits);
    EXPECT_EQ(a.rows[i].lambda.hits, b.rows[i].lambda.hits);
  }
}

TEST(InverseMoments, SingleDriverIsOne) {
  const auto rows = detq_inverse_moments(1, {1.0, 2.0}, 100, 3, 16);
  for (const auto& r : rows) EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(InverseMoments, TwoDriversSplitHalves) {
  const auto rows = detq_inverse_moments(2, {1.0}, 20000, 4, 64);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(std::isfinite(rows[0].mean));
  EXPECT_TRUE(rows[0].halves_agree);
}

TEST(Stats, WilsonAndQuantile) {
  const auto p = wilson(0, 100);
  EXPECT_EQ(p.ci_lo, 0.0);
  EXPECT_GT(p.ci_hi, 0.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  std::vector<double> x{1, 2, 4, 8}, y{3, 12, 48, 192};
  EXPECT_NEAR(fit_loglog(x, y).slope, 2.0, 1e-12);
}

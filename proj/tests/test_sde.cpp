#include "hypodens/density.hpp"
#include "hypodens/sde.hpp"
#include "hypodens/generators.hpp"

#include <gtest/gtest.h>

using namespace hypodens;

namespace {

std::shared_ptr<PolynomialModel> drift_only(const Vector& b) {
  const int n = static_cast<int>(b.size());
  PolyField bf(n);
  for (int a = 0; a < n; ++a) bf[a] = {builtin::mono(b[a])};
  return std::make_shared<PolynomialModel>(n, 1, std::vector<PolyField>(1, PolyField(n)), bf, "ode");
}

}  // namespace

TEST(Integrate, ZeroDiffusionConstantDrift) {
  Vector b(2);
  b << 1.5, -0.25;
  auto m = drift_only(b);
  Vector x0(2);
  x0 << 0.3, 0.1;
  const auto sol = integrate(*m, x0, sample_path(1, 1, 0.4, 32));
  EXPECT_LT((sol.endpoint() - x0 - b * 0.4).norm(), 1e-14);
}

TEST(Integrate, BlowUpReportsIndex) {
  PolyField bf(1);
  bf[0] = {builtin::mono(1.0, {{0, 2}})};
  PolynomialModel m(1, 1, std::vector<PolyField>(1, PolyField(1)), bf, "riccati");
  try {
    integrate(m, Vector::Ones(1), sample_path(1, 1, 100.0, 16));
    FAIL() << "expected BlowUpError";
  } catch (const BlowUpError& e) {
    EXPECT_GT(e.grid_index(), 0u);
    EXPECT_LE(e.grid_index(), 16u);
  }
}

TEST(Integrate, RejectsMismatchedInputs) {
  auto h = builtin::heisenberg();
  EXPECT_THROW(integrate(*h, Vector::Zero(2), sample_path(1, 2, 0.1, 16)), ArgumentError);
  EXPECT_THROW(integrate(*h, Vector::Zero(3), sample_path(1, 3, 0.1, 16)), ArgumentError);
}

TEST(Integrate, StreamingMatchesStoredPath) {
  auto h = builtin::heisenberg();
  EulerWorkspace ws(*h);
  Vector x0(3);
  x0 << 0.2, -0.1, 0.4;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Vector a = integrate(*h, x0, sample_path(s, 2, 0.1, 64)).endpoint();
    const Vector b = integrate_endpoint(ws, x0, s, 0.1, 64);
    EXPECT_LT((a - b).norm(), 1e-12);
  }
}

TEST(TangentFlow, LinearFieldsGiveIdentity) {
  auto e = builtin::elliptic(2);
  const auto sol = tangent_flows(*e, Vector::Zero(2), sample_path(2, 2, 0.1, 32));
  for (const auto& y : sol.y_path) EXPECT_EQ(y, Matrix::Identity(2, 2));
  for (const auto& z : sol.z_path) EXPECT_EQ(z, Matrix::Identity(2, 2));
}

TEST(TangentFlow, HeisenbergInverseFlow) {
  auto h = builtin::heisenberg();
  const auto sol = tangent_flows(*h, Vector::Zero(3), sample_path(3, 2, 0.2, 1024));
  EXPECT_LE(sol.max_flow_error, 1e-6);
  EXPECT_LT((sol.z_path.back() * sol.y_path.back() - Matrix::Identity(3, 3)).norm(), 1e-6);
}

TEST(TangentFlow, RandomModelFlowErrorShrinks) {
  NormalStream g(17);
  auto m = gen::random_polynomial_model(g, 2, 2, 2);
  const Vector x0 = Vector::Zero(2);
  const auto path = sample_path(4, 2, 0.05, 1024);
  SdeOptions opt;
  opt.tangent = true;
  opt.check_flow = false;
  const double fine = integrate(*m, x0, path, opt).max_flow_error;
  const double coarse = integrate(*m, x0, path.coarsen(16), opt).max_flow_error;
  EXPECT_LT(fine, coarse);
}

TEST(TangentFlow, TolerancesTriggerAccuracyError) {
  NormalStream g(18);
  auto m = gen::random_polynomial_model(g, 2, 2, 2);
  EXPECT_THROW(tangent_flows(*m, Vector::Zero(2), sample_path(5, 2, 1.0, 8), 1e-14), AccuracyError);
}

TEST(Malliavin, EllipticIsIdentity) {
  auto e = builtin::elliptic(2);
  const double delta = 0.3;
  const auto sol = tangent_flows(*e, Vector::Zero(2), sample_path(6, 2, delta, 32));
  const auto al = scaled_alpha(*e, Vector::Zero(2), delta);
  const auto mc = reduced_malliavin_covariance(*e, sol, al);
  EXPECT_LT((mc.integrated - delta * Matrix::Identity(2, 2)).norm(), 1e-14);
  EXPECT_LT((mc.gamma_bar - Matrix::Identity(2, 2)).norm(), 1e-12);
  EXPECT_NEAR(mc.lambda_min, 1.0, 1e-12);
}

TEST(Malliavin, FrozenPathHeisenberg) {
  auto h = builtin::heisenberg();
  const double delta = 0.05;
  const auto path = path_from_values(Matrix::Zero(2 * 32 + 1, 2), delta, 32);
  const auto sol = tangent_flows(*h, Vector::Zero(3), path);
  const auto mc = reduced_malliavin_covariance(*h, sol, scaled_alpha(*h, Vector::Zero(3), delta));
  Matrix expect = Matrix::Zero(3, 3);
  expect(0, 0) = expect(1, 1) = delta;
  EXPECT_LT((mc.integrated - expect).norm(), delta * delta);
}

TEST(Malliavin, StreamingMatchesStored) {
  auto h = builtin::heisenberg();
  EulerWorkspace ws(*h);
  const double delta = 0.1;
  const auto al = scaled_alpha(*h, Vector::Zero(3), delta);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto stored =
        reduced_malliavin_covariance(*h, tangent_flows(*h, Vector::Zero(3), sample_path(s, 2, delta, 64)), al);
    const auto streamed = malliavin_streaming(ws, Vector::Zero(3), s, delta, 64, al);
    EXPECT_LT((stored.gamma_bar - streamed.gamma_bar).norm(), 1e-10);
  }
}

TEST(Malliavin, CovarianceStatisticsPositive) {
  auto h = builtin::heisenberg();
  const auto rows = covariance_statistics(*h, Vector::Zero(3), {0.05, 0.2}, 400, 7, 32);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GT(r.q05, 0.0);
    EXPECT_LE(r.q05, r.q25);
    EXPECT_LE(r.q25, r.median);
    EXPECT_LE(r.median, r.q75);
    EXPECT_TRUE(std::isfinite(r.truncated_inverse_moment));
  }
}

TEST(ItoCheck, ConstantFieldIsExact) {
  auto e = builtin::elliptic(2);
  const auto phi = named_field(*e, "sigma:1");
  const auto res = ito_representation_check(*e, Vector::Zero(2), sample_path(8, 2, 0.1, 32), phi);
  EXPECT_LT(res.sup_residual, 1e-12);
}

TEST(ItoCheck, HeisenbergBracketAndRefinement) {
  auto h = builtin::heisenberg();
  Vector x0(3);
  x0 << 0.1, 0.2, 0.0;
  const auto phi = named_field(*h, "bracket:0,1");
  const auto res = ito_representation_check(*h, x0, sample_path(9, 2, 0.1, 64), phi);
  EXPECT_LT(res.sup_residual, 1e-6);

  // a non-constant field on a random model: residual RMS shrinks at order 1/2
  NormalStream g(21);
  auto m = gen::random_polynomial_model(g, 2, 2, 2);
  const auto sig = named_field(*m, "sigma:0");
  std::vector<double> coarse, fine;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto p = sample_path(stream_seed(22, s), 2, 0.05, 1024);
    fine.push_back(ito_representation_check(*m, Vector::Zero(2), p, sig).sup_residual);
    coarse.push_back(ito_representation_check(*m, Vector::Zero(2), p.coarsen(4), sig).sup_residual);
  }
  const double ratio = rms(coarse) / rms(fine);
  EXPECT_GT(ratio, 1.4);
  EXPECT_LT(ratio, 3.0);
}

TEST(ItoCheck, UnknownFieldIsCapabilityError) {
  auto h = builtin::heisenberg();
  EXPECT_THROW(named_field(*h, "drift"), CapabilityError);
  EXPECT_THROW(named_field(*h, "sigma:7"), CapabilityError);
}

#include "hypodens/fields.hpp"
#include "hypodens/generators.hpp"

#include <gtest/gtest.h>

using namespace hypodens;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Symbolic bracket of polynomial fields, written out term by term.
Vector poly_bracket(const PolynomialModel& m, int i, int p, double t, const Vector& x) {
  const int n = m.n();
  auto jac = [&](const PolyField& f) {
    Matrix j = Matrix::Zero(n, n);
    for (int a = 0; a < n; ++a)
      for (const auto& mo : f[a])
        for (int v = 0; v < n; ++v) j(a, v) += detail::eval_monomial_dx(mo, v, t, x);
    return j;
  };
  auto val = [&](const PolyField& f) {
    Vector out = Vector::Zero(n);
    for (int a = 0; a < n; ++a)
      for (const auto& mo : f[a]) out[a] += detail::eval_monomial(mo, t, x);
    return out;
  };
  const auto& s = m.sigma_fields();
  return jac(s[p]) * val(s[i]) - jac(s[i]) * val(s[p]);
}

}  // namespace

TEST(LieBracket, HeisenbergAtOrigin) {
  auto h = builtin::heisenberg();
  EXPECT_LT((lie_bracket(*h, 0, 1, 0.0, Vector::Zero(3)) - vec({0, 0, 1})).norm(), 1e-14);
  EXPECT_LT((lie_bracket(*h, 1, 0, 0.0, Vector::Zero(3)) - vec({0, 0, -1})).norm(), 1e-14);
}

TEST(LieBracket, SelfBracketVanishes) {
  NormalStream g(3);
  auto m = gen::random_polynomial_model(g, 3, 2, 2);
  const Vector x = gen::random_vector(g, 3);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(lie_bracket(*m, i, i, 0.3, x).norm(), 0.0);
}

TEST(LieBracket, Grushin) {
  auto gr = builtin::grushin();
  EXPECT_LT((lie_bracket(*gr, 0, 1, 0.0, Vector::Zero(2)) - vec({0, 1})).norm(), 1e-14);
}

TEST(LieBracket, MatchesSymbolicOnRandomModels) {
  NormalStream g(11);
  for (int c = 0; c < 200; ++c) {
    auto m = gen::random_polynomial_model(g, 3, 3, 2);
    const Vector x = gen::random_vector(g, 3);
    for (int i = 0; i < 3; ++i)
      for (int p = 0; p < 3; ++p) {
        const Vector a = lie_bracket(*m, i, p, 0.0, x);
        EXPECT_LT((a - poly_bracket(*m, i, p, 0.0, x)).norm(), 1e-10 * (1 + a.norm()));
        EXPECT_LT((a + lie_bracket(*m, p, i, 0.0, x)).cwiseAbs().maxCoeff(), 1e-12);
      }
  }
}

TEST(LieBracket, FiniteDifferenceAgrees) {
  auto h = builtin::heisenberg();
  const Vector x = vec({0.3, -0.7, 0.2});
  auto s = [&](int j) { return [&, j](double t, const Vector& y) { return h->sigma_at(j, t, y); }; };
  const Vector fd = lie_bracket_fd(s(0), s(1), 0.0, x);
  EXPECT_LT((fd - lie_bracket(*h, 0, 1, 0.0, x)).norm(), 1e-6);
}

TEST(DirectionalMatrix, HeisenbergColumns) {
  const auto a = directional_matrix(*builtin::heisenberg(), 0.0, Vector::Zero(3));
  Matrix expect(3, 4);
  expect << 1, 0, 0, 0,
            0, 0, 0, 1,
            0, -1, 1, 0;
  EXPECT_LT((a.entries - expect).norm(), 1e-14);
  EXPECT_EQ(a.col_index(1, 0), 1);
  EXPECT_EQ(a.col_index(0, 1), 2);
}

TEST(DirectionalMatrix, GrushinColumns) {
  const auto a = directional_matrix(*builtin::grushin(), 0.0, Vector::Zero(2));
  Matrix expect(2, 4);
  expect << 1, 0, 0, 0,
            0, -1, 1, 0;
  EXPECT_LT((a.entries - expect).norm(), 1e-14);
}

TEST(DirectionalMatrix, ConstantFieldsHaveNoBrackets) {
  const auto a = directional_matrix(*builtin::elliptic(2), 0.0, Vector::Zero(2));
  EXPECT_EQ(a.entries.col(1).norm() + a.entries.col(2).norm(), 0.0);
  EXPECT_EQ(a.entries.col(0), vec({1, 0}));
  EXPECT_EQ(a.entries.col(3), vec({0, 1}));
}

TEST(HoermanderLambda, Examples) {
  EXPECT_NEAR(hoermander_lambda(directional_matrix(*builtin::heisenberg(), 0.0, Vector::Zero(3))), 1.0, 1e-12);
  EXPECT_NEAR(hoermander_lambda(directional_matrix(*builtin::grushin(), 0.0, Vector::Zero(2))), 1.0, 1e-12);
  EXPECT_EQ(hoermander_lambda(make_directional(Matrix::Zero(2, 4), 2, 0.0, Vector::Zero(2), 1.0)), 0.0);
}

TEST(ScaleMatrix, HeisenbergGram) {
  const auto a = scale_matrix(directional_matrix(*builtin::heisenberg(), 0.0, Vector::Zero(3)), 0.01);
  const Matrix gram = a.entries * a.entries.transpose();
  Matrix expect = Matrix::Zero(3, 3);
  expect.diagonal() << 0.01, 0.01, 2e-4;
  EXPECT_LT((gram - expect).norm(), 1e-16);
  EXPECT_THROW(scale_matrix(a, 0.0), ArgumentError);
}

TEST(ScaleMatrix, UnitDeltaAndSingleDriver) {
  const auto a = directional_matrix(*builtin::heisenberg(), 0.0, Vector::Zero(3));
  EXPECT_EQ(scale_matrix(a, 1.0).entries, a.entries);
  const auto e = directional_matrix(*builtin::elliptic(1), 0.0, Vector::Zero(1));
  EXPECT_NEAR(scale_matrix(e, 0.25).entries(0, 0), 0.5, 1e-15);
}

TEST(AnisoNorm, HeisenbergBracketDirection) {
  const auto a = scale_matrix(directional_matrix(*builtin::heisenberg(), 0.0, Vector::Zero(3)), 0.01);
  EXPECT_NEAR(aniso_norm(a, vec({0, 0, 1})), 1.0 / (std::sqrt(2.0) * 0.01), 1e-9);
  EXPECT_EQ(aniso_norm(a, Vector::Zero(3)), 0.0);
  const auto g = scale_matrix(directional_matrix(*builtin::grushin(), 0.0, vec({0, 0})), 0.1);
  EXPECT_NO_THROW(aniso_norm(g, vec({1, 1})));
  const auto z = make_directional(Matrix::Zero(2, 4), 2, 0.0, Vector::Zero(2), 1.0);
  EXPECT_THROW(aniso_norm(z, vec({1, 1})), DegeneracyError);
}

TEST(AnisoNorm, MatchesGramInverse) {
  NormalStream g(5);
  for (int c = 0; c < 100; ++c) {
    auto m = gen::random_polynomial_model(g, 3, 2, 1);
    const auto a = scale_matrix(directional_matrix(*m, 0.0, gen::random_vector(g, 3)), 0.05);
    const Vector y = gen::random_vector(g, 3);
    const Matrix gram = a.entries * a.entries.transpose();
    const double direct = std::sqrt(y.dot(gram.ldlt().solve(y)));
    EXPECT_NEAR(aniso_norm(a, y), direct, 1e-8 * direct);
  }
}

TEST(GammaExtension, SquareCaseIsA) {
  const auto a = scale_matrix(directional_matrix(*builtin::elliptic(1), 0.0, Vector::Zero(1)), 0.3);
  const auto gm = gamma_extension(a);
  EXPECT_NEAR(std::abs(gm.gamma(0, 0)), std::sqrt(0.3), 1e-15);
  EXPECT_NEAR(gm.gamma(0, 0), a.entries(0, 0), 1e-15);
}

TEST(GammaExtension, BlockIdentityAndNorm) {
  const auto a = scale_matrix(directional_matrix(*builtin::heisenberg(), 0.0, vec({0.1, 0.2, 0.3})), 0.02);
  const auto gm = gamma_extension(a);
  const Matrix ggt = gm.gamma * gm.gamma.transpose();
  EXPECT_LT((ggt.topLeftCorner(3, 3) - a.entries * a.entries.transpose()).norm(), 1e-14);
  EXPECT_LT((ggt.bottomRightCorner(1, 1) - Matrix::Identity(1, 1)).norm(), 1e-12);
  EXPECT_LT(ggt.topRightCorner(3, 1).norm(), 1e-12);
  const Vector y = vec({1, -2, 0.5});
  EXPECT_NEAR(gm.norm(gm.embed0(y)), aniso_norm(a, y), 1e-8);
  NormalStream g(2);
  const Vector w = gen::random_vector(g, 4);
  EXPECT_LT((gm.gamma * gm.solve(w) - w).norm(), 1e-10 * w.norm());
}

TEST(AlphaFactor, HeisenbergDeterminant) {
  for (double delta : {0.01, 0.1, 0.5}) {
    const auto al = alpha_factor(scale_matrix(directional_matrix(*builtin::heisenberg(), 0.0, Vector::Zero(3)), delta));
    EXPECT_NEAR(al.det, std::sqrt(2.0) * delta * delta, 1e-14);
    EXPECT_NEAR(al.alpha.determinant(), al.det, 1e-12);
    EXPECT_NEAR(al.u.determinant(), 1.0, 1e-12);
  }
}

TEST(AlphaFactor, OrthonormalRowsGiveUnitDeterminant) {
  const auto a = make_directional(Matrix::Identity(1, 1), 1, 0.0, Vector::Zero(1), 1.0);
  EXPECT_NEAR(alpha_factor(a).det, 1.0, 1e-15);
}

TEST(AlphaFactor, InverseNormIdentity) {
  NormalStream g(9);
  for (int c = 0; c < 100; ++c) {
    auto m = gen::random_polynomial_model(g, 4, 3, 1);
    const auto a = scale_matrix(directional_matrix(*m, 0.0, gen::random_vector(g, 4)), 0.1);
    const auto al = alpha_factor(a);
    const Vector y = gen::random_vector(g, 4);
    EXPECT_NEAR(al.inverse_apply(y).norm(), aniso_norm(a, y), 1e-9 * (1 + aniso_norm(a, y)));
    EXPECT_LT((al.apply(al.inverse_apply(y)) - y).norm(), 1e-10 * y.norm());
    // alpha^{-1} A_delta has orthonormal rows
    const Matrix r = al.inverse() * a.entries;
    EXPECT_LT((r * r.transpose() - Matrix::Identity(4, 4)).norm(), 1e-9);
  }
}

TEST(DimSpanSigma, Examples) {
  EXPECT_EQ(dim_span_sigma(*builtin::heisenberg(), 0.0, Vector::Zero(3)), 2);
  EXPECT_EQ(dim_span_sigma(*builtin::grushin(), 0.0, Vector::Zero(2)), 1);
  EXPECT_EQ(dim_span_sigma(*builtin::grushin(), 0.0, vec({1, 0})), 2);
  EXPECT_DOUBLE_EQ(diagonal_exponent_theory(*builtin::heisenberg(), Vector::Zero(3)), 2.0);
  EXPECT_DOUBLE_EQ(diagonal_exponent_theory(*builtin::grushin(), Vector::Zero(2)), 1.5);
  EXPECT_DOUBLE_EQ(diagonal_exponent_theory(*builtin::elliptic(2), Vector::Zero(2)), 1.0);
  std::vector<PolyField> zero(2, PolyField(2));
  PolynomialModel z(2, 2, zero, PolyField(2), "zero");
  EXPECT_EQ(dim_span_sigma(z, 0.0, Vector::Zero(2)), 0);
}

TEST(Model, NonFiniteCallbackCarriesLocation) {
  CallbackModel m(
      1, 1, [](int, double, const Vector& x) { return Vector::Constant(1, std::log(x[0])); },
      [](double, const Vector&) { return Vector::Zero(1).eval(); }, "log");
  try {
    m.sigma_at(0, 0.5, vec({-1.0}));
    FAIL() << "expected EvaluationError";
  } catch (const EvaluationError& e) {
    EXPECT_EQ(e.field(), 0);
    EXPECT_DOUBLE_EQ(e.time(), 0.5);
  }
}

#pragma once

// Lie brackets, the directional matrix A(t,x), its scaled version A_delta,
// the anisotropic norm |y|_{A_delta} and the orthogonal extension Gamma_delta.

#include "hypodens/core.hpp"
#include "hypodens/model.hpp"

#include <algorithm>
#include <cmath>

namespace hypodens {

inline constexpr double kDefaultRankTol = 1e-9;

/// [sigma_i, sigma_p](t,x) = d_{sigma_i} sigma_p - d_{sigma_p} sigma_i, where
/// d_g f = (grad f) g.
inline Vector lie_bracket(const VectorFieldModel& model, int i, int p, double t, const Vector& x) {
  if (i < 0 || p < 0 || i >= model.d() || p >= model.d())
    throw ArgumentError("lie_bracket: field index out of range");
  if (i == p) return Vector::Zero(model.n());
  const Vector si = model.sigma_at(i, t, x);
  const Vector sp = model.sigma_at(p, t, x);
  const Matrix ji = model.jac_sigma_at(i, t, x);
  const Matrix jp = model.jac_sigma_at(p, t, x);
  return jp * si - ji * sp;
}

/// Lie bracket of two arbitrary R^n fields given as callables f(t, x) -> Vector.
/// Jacobians are taken by central differences with step h.
template <class G, class F>
Vector lie_bracket_fd(G&& g, F&& f, double t, const Vector& x, double h = 1e-5) {
  const Eigen::Index n = x.size();
  Matrix jg(n, n), jf(n, n);
  Vector y = x;
  for (Eigen::Index c = 0; c < n; ++c) {
    y[c] = x[c] + h;
    Vector gp = g(t, y), fp = f(t, y);
    y[c] = x[c] - h;
    Vector gm = g(t, y), fm = f(t, y);
    y[c] = x[c];
    jg.col(c) = (gp - gm) / (2 * h);
    jf.col(c) = (fp - fm) / (2 * h);
  }
  return jf * g(t, x) - jg * f(t, x);
}

/// The n x d^2 matrix of driving fields and their first brackets, with its
/// singular value decomposition cached.
///
/// Column l(i,p) = p*d + i (0-based) holds sigma_i when i == p and
/// [sigma_i, sigma_p] otherwise. For a scaled matrix (scale != 1) the
/// sigma columns carry sqrt(delta) and the bracket columns delta.
struct DirectionalMatrix {
  Matrix entries;
  int d = 0;
  double t = 0.0;
  Vector x;
  double scale = 1.0;
  Vector singular_values;  // non-increasing, length min(n, m)
  Matrix u;                // n x n left singular vectors, det(u) = +1
  Matrix v;                // m x m right singular vectors

  int n() const { return static_cast<int>(entries.rows()); }
  int m() const { return static_cast<int>(entries.cols()); }
  static int col_index(int i, int p, int d) { return p * d + i; }
  int col_index(int i, int p) const { return col_index(i, p, d); }

  double largest_singular_value() const {
    return singular_values.size() ? singular_values[0] : 0.0;
  }
  /// Smallest singular value of A as an n x m operator, i.e. sqrt of the smallest
  /// eigenvalue of A A^T (zero when n > m).
  double smallest_singular_value() const {
    if (n() > m() || singular_values.size() == 0) return 0.0;
    return singular_values[singular_values.size() - 1];
  }
  bool full_row_rank(double rank_tol = kDefaultRankTol) const {
    const double top = largest_singular_value();
    return n() <= m() && top > 0.0 && smallest_singular_value() > rank_tol * top;
  }
  void require_full_row_rank(const char* who, double rank_tol = kDefaultRankTol) const {
    if (!full_row_rank(rank_tol))
      throw DegeneracyError(std::string(who) + ": directional matrix is rank deficient (lambda_* = " +
                                std::to_string(smallest_singular_value()) + ")",
                            smallest_singular_value());
  }

  void factorize() {
    Eigen::JacobiSVD<Matrix> svd(entries, Eigen::ComputeFullU | Eigen::ComputeFullV);
    singular_values = svd.singularValues();
    u = svd.matrixU();
    v = svd.matrixV();
    // Keep U in SO(n): flipping a left/right singular pair leaves A unchanged.
    if (u.rows() > 0 && u.determinant() < 0) {
      u.col(0) *= -1.0;
      v.col(0) *= -1.0;
    }
  }
};

inline DirectionalMatrix make_directional(Matrix entries, int d, double t, Vector x, double scale) {
  DirectionalMatrix a;
  a.entries = std::move(entries);
  a.d = d;
  a.t = t;
  a.x = std::move(x);
  a.scale = scale;
  a.factorize();
  return a;
}

inline DirectionalMatrix directional_matrix(const VectorFieldModel& model, double t, const Vector& x) {
  const int d = model.d();
  Matrix a(model.n(), d * d);
  for (int p = 0; p < d; ++p)
    for (int i = 0; i < d; ++i)
      a.col(DirectionalMatrix::col_index(i, p, d)) =
          (i == p) ? model.sigma_at(i, t, x) : lie_bracket(model, i, p, t, x);
  return make_directional(std::move(a), d, t, x, 1.0);
}

/// lambda(t,x): inf over unit xi of sum_l <A_l, xi>^2, reported as its square root,
/// the smallest singular value.
inline double hoermander_lambda(const DirectionalMatrix& a) { return a.smallest_singular_value(); }

/// A_delta = A D_delta: sqrt(delta) on sigma columns, delta on bracket columns.
inline DirectionalMatrix scale_matrix(const DirectionalMatrix& a, double delta) {
  if (!(delta > 0)) throw ArgumentError("scale_matrix: delta must be positive");
  if (a.scale != 1.0) throw ArgumentError("scale_matrix: matrix is already scaled");
  Matrix e = a.entries;
  const double sq = std::sqrt(delta);
  for (int p = 0; p < a.d; ++p)
    for (int i = 0; i < a.d; ++i) e.col(a.col_index(i, p)) *= (i == p) ? sq : delta;
  return make_directional(std::move(e), a.d, a.t, a.x, delta);
}

/// |y|_{A} = sqrt(<(A A^T)^{-1} y, y>) = |Sigma^{-1} U^T y|.
inline double aniso_norm(const DirectionalMatrix& a, const Vector& y,
                         double rank_tol = kDefaultRankTol) {
  a.require_full_row_rank("aniso_norm", rank_tol);
  const int n = a.n();
  Vector w = a.u.transpose() * y;
  for (int k = 0; k < n; ++k) w[k] /= a.singular_values[k];
  return w.norm();
}

/// Gamma_delta: the m x m matrix whose first n rows are those of A_delta and
/// whose remaining rows are an orthonormal basis of the complement of the row
/// space, with the factorization Gamma = diag(U, Id) diag(Sigma, Id) V^T.
struct GammaExtension {
  Matrix gamma;           // m x m
  Matrix u;               // n x n, in SO(n)
  Vector sigma_bar;       // n singular values of A_delta
  Matrix v;               // m x m orthogonal; Gamma = blockdiag(u, Id)*blockdiag(sigma_bar, Id)*v^T
  int n = 0;

  int m() const { return static_cast<int>(gamma.rows()); }

  /// Gamma^{-1} y through the factorization.
  Vector solve(const Vector& y) const {
    Vector w(m());
    w.head(n) = (u.transpose() * y.head(n)).cwiseQuotient(sigma_bar);
    w.tail(m() - n) = y.tail(m() - n);
    return v * w;
  }
  /// |y|_{Gamma} = sqrt(<(Gamma Gamma^T)^{-1} y, y>).
  double norm(const Vector& y) const {
    Vector w(m());
    w.head(n) = (u.transpose() * y.head(n)).cwiseQuotient(sigma_bar);
    w.tail(m() - n) = y.tail(m() - n);
    return w.norm();
  }
  /// J_a(z): z in the first n slots, <Gamma^i, a> in the rest.
  Vector embed(const Vector& z, const Vector& a) const {
    Vector out(m());
    out.head(n) = z;
    if (m() > n) out.tail(m() - n) = gamma.bottomRows(m() - n) * a;
    return out;
  }
  Vector embed0(const Vector& z) const {
    Vector out = Vector::Zero(m());
    out.head(n) = z;
    return out;
  }
};

inline GammaExtension gamma_extension(const DirectionalMatrix& a_delta,
                                      double rank_tol = kDefaultRankTol) {
  a_delta.require_full_row_rank("gamma_extension", rank_tol);
  const int n = a_delta.n(), m = a_delta.m();
  GammaExtension g;
  g.n = n;
  g.u = a_delta.u;
  g.sigma_bar = a_delta.singular_values.head(n);
  g.v = a_delta.v;
  // Null-space rows: sign fixed so the first non-negligible entry is positive.
  for (int k = n; k < m; ++k) {
    auto col = g.v.col(k);
    for (int r = 0; r < m; ++r) {
      if (std::abs(col[r]) > 1e-12) {
        if (col[r] < 0) col *= -1.0;
        break;
      }
    }
  }
  g.gamma.resize(m, m);
  g.gamma.topRows(n) = a_delta.entries;
  if (m > n) g.gamma.bottomRows(m - n) = g.v.rightCols(m - n).transpose();
  return g;
}

/// alpha = U Sigma_bar; det(alpha) = sqrt(det(A_delta A_delta^T)).
struct AlphaFactor {
  Matrix alpha;
  double det = 0.0;
  Matrix u;
  Vector sigma_bar;

  /// alpha^{-1} y.
  Vector inverse_apply(const Vector& y) const {
    return (u.transpose() * y).cwiseQuotient(sigma_bar);
  }
  Vector apply(const Vector& z) const { return alpha * z; }
  Matrix inverse() const { return sigma_bar.cwiseInverse().asDiagonal() * u.transpose(); }
};

inline AlphaFactor alpha_factor(const DirectionalMatrix& a_delta, double rank_tol = kDefaultRankTol) {
  a_delta.require_full_row_rank("alpha_factor", rank_tol);
  const int n = a_delta.n();
  AlphaFactor f;
  f.u = a_delta.u;
  f.sigma_bar = a_delta.singular_values.head(n);
  f.alpha = f.u * f.sigma_bar.asDiagonal();
  f.det = f.sigma_bar.prod();
  return f;
}

/// Numerical rank of [sigma_1 ... sigma_d](t,x).
inline int dim_span_sigma(const VectorFieldModel& model, double t, const Vector& x,
                          double rank_tol = kDefaultRankTol) {
  Matrix s(model.n(), model.d());
  for (int j = 0; j < model.d(); ++j) s.col(j) = model.sigma_at(j, t, x);
  Eigen::JacobiSVD<Matrix> svd(s);
  const Vector sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0) return 0;
  int r = 0;
  for (Eigen::Index k = 0; k < sv.size(); ++k)
    if (sv[k] > rank_tol * sv[0]) ++r;
  return r;
}

/// Small-time diagonal exponent n - dim<sigma(0,x0)>/2.
inline double diagonal_exponent_theory(const VectorFieldModel& model, const Vector& x0) {
  return model.n() - 0.5 * dim_span_sigma(model, 0.0, x0);
}

/// Linear-growth diagnostic: max over the sample points of
/// (sum_j |sigma_j| + |b|) / (1 + |x|). Compare against model.kappa.
inline double growth_ratio(const VectorFieldModel& model, double t, const std::vector<Vector>& points) {
  double worst = 0.0;
  for (const auto& x : points) {
    double s = model.drift_at(t, x).norm();
    for (int j = 0; j < model.d(); ++j) s += model.sigma_at(j, t, x).norm();
    worst = std::max(worst, s / (1.0 + x.norm()));
  }
  return worst;
}

}  // namespace hypodens

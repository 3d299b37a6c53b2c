#pragma once

// Second-order stochastic Taylor term Z_delta, its split Z = V + A Delta + eta,
// the remainder R_delta, the Gamma-transformed quantities, and the local
// inversion of theta -> theta + eta(theta) with the perturbed Gaussian bounds.

#include "hypodens/core.hpp"
#include "hypodens/fields.hpp"
#include "hypodens/model.hpp"
#include "hypodens/parallel.hpp"
#include "hypodens/paths.hpp"
#include "hypodens/rng.hpp"
#include "hypodens/sde.hpp"
#include "hypodens/stats.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace hypodens {

/// How the first-order part of V is weighted: by a_i (Weighted) or by the
/// bare scalar sum of off-block increments added to every component (Bare).
enum class VConvention { Weighted, Bare };

struct DecompositionBundle {
  double delta = 0.0;
  Matrix a;                 // n x d, column i = sigma_i(0, x0)
  std::vector<Matrix> aij;  // aij[i](:, j) = d_{sigma_i} sigma_j (0, x0)
  Vector z_delta;
  Vector v_term;
  Matrix eps_p;             // n x d, column p = eps_p
  Matrix eta_p;             // n x d, column p = eta_p
  Vector eta;
  Vector delta_vec;         // Delta(delta, W) in R^m
  Vector theta;
  Vector residual_key;      // z_delta - v_term - A delta_vec - eta

  int n() const { return static_cast<int>(a.rows()); }
  int d() const { return static_cast<int>(a.cols()); }
  Vector a_ij(int i, int j) const { return aij[i].col(j); }
};

/// Taylor coefficients a_i = sigma_i(0,x0) and a_ij = d_{sigma_i} sigma_j(0,x0).
inline void taylor_coefficients(const VectorFieldModel& model, const Vector& x0, Matrix& a,
                                std::vector<Matrix>& aij) {
  const int n = model.n(), d = model.d();
  a.resize(n, d);
  for (int i = 0; i < d; ++i) a.col(i) = model.sigma_at(i, 0.0, x0);
  aij.assign(d, Matrix(n, d));
  for (int j = 0; j < d; ++j) {
    const Matrix jj = model.jac_sigma_at(j, 0.0, x0);
    for (int i = 0; i < d; ++i) aij[i].col(j) = jj * a.col(i);
  }
}

/// Z_delta = sum a_i W^i_delta + sum a_ij int_0^delta W^i o dW^j, with the
/// off-diagonal integrals as left-point sums over the full grid.
inline Vector taylor_z(const Matrix& a, const std::vector<Matrix>& aij, const BrownianGrid& path) {
  const int d = path.d, steps = path.total_steps();
  Vector z = a * path.endpoint();
  Matrix iter = Matrix::Zero(d, d);
  for (int r = 0; r < steps; ++r)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) iter(i, j) += path.values(r, i) * (path.values(r + 1, j) - path.values(r, j));
  for (int i = 0; i < d; ++i) {
    const double wi = path.values(steps, i);
    iter(i, i) = 0.5 * wi * wi;
  }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) z += aij[i].col(j) * iter(i, j);
  return z;
}

/// Delta_{l(i,p)} = Delta_p^{i,p} for i != p and Delta_p^p for i == p.
inline Vector delta_vector(const IteratedIntegrals& ii) {
  const int d = ii.d();
  Vector v(d * d);
  for (int p = 0; p < d; ++p)
    for (int i = 0; i < d; ++i) v[p * d + i] = (i == p) ? ii.inc(p, p) : ii.iter[p](i, p);
  return v;
}

inline DecompositionBundle taylor_principal(const VectorFieldModel& model, const Vector& x0,
                                            const BrownianGrid& path,
                                            VConvention conv = VConvention::Weighted) {
  check_start(model, x0);
  check_driving(model, path);
  const int n = model.n(), d = model.d();
  DecompositionBundle b;
  b.delta = path.delta;
  taylor_coefficients(model, x0, b.a, b.aij);
  const IteratedIntegrals ii = increments_and_iterated(path);
  const Matrix& D = ii.inc;  // D(l, i) = Delta_l^i
  auto A2 = [&](int i, int j) { return b.aij[i].col(j); };

  b.z_delta = taylor_z(b.a, b.aij, path);

  // V
  b.v_term = Vector::Zero(n);
  for (int l = 0; l < d; ++l)
    for (int i = 0; i < d; ++i) {
      if (i == l) continue;
      if (conv == VConvention::Weighted)
        b.v_term += b.a.col(i) * D(l, i);
      else
        b.v_term.array() += D(l, i);
    }
  for (int p = 0; p < d; ++p)
    for (int l = p + 1; l < d; ++l)
      for (int i = 0; i < d; ++i) {
        if (i == p) continue;
        for (int j = 0; j < d; ++j)
          if (j != l) b.v_term += A2(i, j) * D(p, i) * D(l, j);
      }
  for (int l = 0; l < d; ++l)
    for (int i = 0; i < d; ++i)
      if (i != l) b.v_term += 0.5 * A2(i, i) * D(l, i) * D(l, i);
  for (int l = 0; l < d; ++l)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j && i != l && j != l) b.v_term += A2(i, j) * ii.iter[l](i, j);

  // eps_p and eta_p
  b.eps_p = Matrix::Zero(n, d);
  b.eta_p = Matrix::Zero(n, d);
  for (int p = 0; p < d; ++p) {
    Vector e = Vector::Zero(n);
    for (int l = p + 1; l < d; ++l)
      for (int j = 0; j < d; ++j)
        if (j != l) e += A2(p, j) * D(l, j);
    for (int l = 0; l < p; ++l)
      for (int j = 0; j < d; ++j)
        if (j != l) e += A2(j, p) * D(l, j);
    for (int j = 0; j < d; ++j)
      if (j != p) e += A2(p, j) * D(p, j);
    b.eps_p.col(p) = e;
    Vector eta = 0.5 * A2(p, p) * D(p, p) * D(p, p);
    for (int l = p + 1; l < d; ++l) eta += A2(p, l) * D(p, p) * D(l, l);
    eta += D(p, p) * e;
    b.eta_p.col(p) = eta;
  }
  b.eta = b.eta_p.rowwise().sum();

  b.delta_vec = delta_vector(ii);
  b.theta = theta_vector(ii, path.delta);
  const DirectionalMatrix am = directional_matrix(model, 0.0, x0);
  b.residual_key = b.z_delta - b.v_term - am.entries * b.delta_vec - b.eta;
  return b;
}

/// |Z_delta - V - A Delta - eta|. Throws DecompositionError above `tol`.
inline double verify_key_decomposition(const DecompositionBundle& b, const DirectionalMatrix& a,
                                       double tol = std::numeric_limits<double>::infinity()) {
  if (a.scale != 1.0) throw ArgumentError("verify_key_decomposition expects the unscaled matrix A(0,x0)");
  const double res = (b.z_delta - b.v_term - a.entries * b.delta_vec - b.eta).norm();
  if (res > tol)
    throw DecompositionError("key decomposition residual " + std::to_string(res) + " exceeds " +
                             std::to_string(tol) + " (coefficient convention mismatch?)");
  return res;
}

// ---------------------------------------------------------------------------

struct RemainderRow {
  double delta = 0.0;
  std::size_t n_paths = 0;
  double rms = 0.0;
};

struct RemainderScaling {
  std::vector<RemainderRow> rows;
  LinearFit fit;  // log rms against log delta; slope nan when not fittable
};

/// R_delta = X_delta - x0 - Z_delta - b(0,x0) delta over n_paths paths per delta
/// (path k from stream_seed(seed, k), common across deltas).
inline RemainderScaling remainder_scaling(const VectorFieldModel& model, const Vector& x0, std::uint64_t seed,
                                          std::size_t n_paths, const std::vector<double>& delta_grid,
                                          int steps_per_sub) {
  check_start(model, x0);
  Matrix a;
  std::vector<Matrix> aij;
  taylor_coefficients(model, x0, a, aij);
  const Vector b0 = model.drift_at(0.0, x0);
  RemainderScaling out;
  std::vector<double> xs, ys;
  for (double delta : delta_grid) {
    std::vector<double> sq(n_paths);
    parallel_for(n_paths, [&](std::size_t k) {
      const BrownianGrid path = sample_path(stream_seed(seed, k), model.d(), delta, steps_per_sub);
      const Vector x = integrate(model, x0, path).endpoint();
      sq[k] = (x - x0 - taylor_z(a, aij, path) - b0 * delta).squaredNorm();
    });
    RemainderRow row;
    row.delta = delta;
    row.n_paths = n_paths;
    row.rms = std::sqrt(mean(sq));
    out.rows.push_back(row);
    if (row.rms > 0 && std::isfinite(row.rms)) {
      xs.push_back(delta);
      ys.push_back(row.rms);
    }
  }
  if (xs.size() >= 2)
    out.fit = fit_loglog(xs, ys);
  else
    out.fit.slope = std::nan("");
  return out;
}

// ---------------------------------------------------------------------------

struct TildeQuantities {
  Vector z_tilde;    // Gamma^{-1} J_Theta(Z_delta)
  Vector v_tilde;    // Gamma^{-1} J_0(V)
  Vector eta_tilde;  // Gamma^{-1} J_0(eta)
  Vector g;          // Theta + eta_tilde
  double identity_residual = 0.0;  // |z_tilde - v_tilde - g|
};

inline TildeQuantities tilde_transform(const GammaExtension& gamma, const DecompositionBundle& b) {
  if (gamma.n != b.n() || gamma.m() != b.d() * b.d())
    throw ArgumentError("tilde_transform: Gamma does not match the bundle dimensions");
  TildeQuantities t;
  t.z_tilde = gamma.solve(gamma.embed(b.z_delta, b.theta));
  t.v_tilde = gamma.solve(gamma.embed0(b.v_term));
  t.eta_tilde = gamma.solve(gamma.embed0(b.eta));
  t.g = b.theta + t.eta_tilde;
  t.identity_residual = (t.z_tilde - t.v_tilde - t.g).norm();
  return t;
}

// ---------------------------------------------------------------------------

/// Quadratic map eta(theta)^j = (L theta)_j + theta^T H_j theta / 2 from R^m to R^k.
struct EtaMap {
  Matrix linear;              // k x m
  std::vector<Matrix> hess;   // k symmetric m x m

  int m() const { return static_cast<int>(linear.cols()); }
  int k() const { return static_cast<int>(linear.rows()); }

  static EtaMap zero(int k, int m) {
    EtaMap e;
    e.linear = Matrix::Zero(k, m);
    e.hess.assign(k, Matrix::Zero(m, m));
    return e;
  }

  Vector operator()(const Vector& th) const {
    Vector out = linear * th;
    for (int j = 0; j < k(); ++j) out[j] += 0.5 * th.dot(hess[j] * th);
    return out;
  }
  /// J(j, i) = d eta^j / d theta_i
  Matrix jacobian(const Vector& th) const {
    Matrix jm = linear;
    for (int j = 0; j < k(); ++j) jm.row(j) += (hess[j] * th).transpose();
    return jm;
  }
};

/// eta as a function of Theta with the off-block increments frozen:
/// sum_p (a_pp/2) delta Th_{l(p)}^2 + sum_{l>p} a_pl delta Th_{l(p)} Th_{l(l)} + sqrt(delta) Th_{l(p)} eps_p.
inline EtaMap eta_omega(const DecompositionBundle& b) {
  const int n = b.n(), d = b.d(), m = d * d;
  const double delta = b.delta, sq = std::sqrt(delta);
  EtaMap e = EtaMap::zero(n, m);
  for (int p = 0; p < d; ++p) {
    const int lp = theta_diag_index(p, d);
    for (int c = 0; c < n; ++c) {
      e.linear(c, lp) += sq * b.eps_p(c, p);
      e.hess[c](lp, lp) += delta * b.aij[p](c, p);
      for (int l = p + 1; l < d; ++l) {
        const int ll = theta_diag_index(l, d);
        e.hess[c](lp, ll) += delta * b.aij[p](c, l);
        e.hess[c](ll, lp) += delta * b.aij[p](c, l);
      }
    }
  }
  return e;
}

/// theta -> Gamma^{-1} J_0(eta(theta)), an R^m -> R^m quadratic map.
inline EtaMap eta_tilde_map(const GammaExtension& gamma, const EtaMap& eta) {
  const int n = gamma.n, m = gamma.m();
  if (eta.k() != n || eta.m() != m) throw ArgumentError("eta_tilde_map: dimension mismatch");
  Matrix t(m, n);
  for (int c = 0; c < n; ++c) t.col(c) = gamma.solve(gamma.embed0(Vector::Unit(n, c)));
  EtaMap out = EtaMap::zero(m, m);
  out.linear = t * eta.linear;
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < n; ++c) out.hess[j] += t(j, c) * eta.hess[c];
  return out;
}

struct EtaConstants {
  double c2 = 0.0;
  double c3 = 0.0;
  double c_star = 0.0;  // at the requested h
  double h_eta = 0.0;
  bool capped = false;
};

inline constexpr double kMaxInverseRadius = 1e6;

/// c2 = max |d_ij eta^k|, c3 = 0 (quadratic), c_star(h) = sup_{|x| <= 2h} max |d_i eta^j(x)|
/// = max_{i,j} (|L_ji| + 2h |H_j row i|), h_eta = 1 / (16 m^2 (c2 + sqrt c3)).
inline EtaConstants eta_constants(const EtaMap& eta, double h, double max_radius = kMaxInverseRadius) {
  if (!(h >= 0)) throw ArgumentError("eta_constants: h must be non-negative");
  EtaConstants c;
  for (int j = 0; j < eta.k(); ++j) {
    c.c2 = std::max(c.c2, eta.hess[j].cwiseAbs().maxCoeff());
    for (int i = 0; i < eta.m(); ++i)
      c.c_star = std::max(c.c_star, std::abs(eta.linear(j, i)) + 2 * h * eta.hess[j].row(i).norm());
  }
  const double m = eta.m();
  const double denom = 16 * m * m * (c.c2 + std::sqrt(c.c3));
  if (denom > 0 && 1.0 / denom < max_radius) {
    c.h_eta = 1.0 / denom;
  } else {
    c.h_eta = max_radius;
    c.capped = true;
  }
  return c;
}

struct LocalInverse {
  Vector theta;
  int iterations = 0;
  double residual = 0.0;  // |theta + eta(theta) - y|
};

/// Solves theta + eta(theta) = y by theta_{k+1} = (Id + L)^{-1} (y - q(theta_k)),
/// q the quadratic part, starting from 0.
inline LocalInverse local_inverse(const EtaMap& eta, const Vector& y, double fp_tol = 1e-12,
                                  int max_iter = 200) {
  if (eta.k() != eta.m()) throw ArgumentError("local_inverse: eta must map R^m to R^m");
  if (y.size() != eta.m()) throw ArgumentError("local_inverse: y has the wrong dimension");
  const EtaConstants c = eta_constants(eta, 0.0);
  if (y.norm() > 0.5 * c.h_eta)
    throw DomainError("local_inverse: |y| = " + std::to_string(y.norm()) + " exceeds h_eta/2 = " +
                      std::to_string(0.5 * c.h_eta));
  const double lnorm = eta.m() ? Eigen::JacobiSVD<Matrix>(eta.linear).singularValues()[0] : 0.0;
  if (lnorm > 0.5) throw DomainError("local_inverse: |grad eta(0)| = " + std::to_string(lnorm) + " > 1/2");
  const int m = eta.m();
  const Eigen::PartialPivLU<Matrix> lu(Matrix::Identity(m, m) + eta.linear);
  LocalInverse out;
  Vector th = Vector::Zero(m), q(m);
  const double escape = 4.0 * c.h_eta;
  for (int it = 1; it <= max_iter; ++it) {
    for (int j = 0; j < m; ++j) q[j] = 0.5 * th.dot(eta.hess[j] * th);
    Vector next = lu.solve(y - q);
    const double step = (next - th).norm();
    th = std::move(next);
    out.iterations = it;
    if (!th.allFinite() || th.norm() > escape)
      throw ConvergenceError("local_inverse: iterate left B(0, 4 h_eta)");
    if (step <= fp_tol) break;
    if (it == max_iter) throw ConvergenceError("local_inverse: no convergence in " + std::to_string(max_iter) + " iterations");
  }
  out.theta = th;
  out.residual = (th + eta(th) - y).norm();
  return out;
}

struct GaussianBounds {
  double lower = 0.0;
  double upper = 0.0;
  bool in_domain = true;
  bool hypotheses_ok = true;
  std::vector<std::string> violations;
};

/// Lower  exp(-8|z|^2/lam_min) / ((8 pi)^{m/2} det Q^{1/2}),
/// upper  2^{m/2} exp(-|z|^2/(32 lam_max)) / (pi^{m/2} det Q^{1/2}),
/// valid for |z| <= r under c_star(eta, 16 r) <= sqrt(lam_min/lam_max)/(2m) and r <= h_eta.
inline GaussianBounds perturbed_gaussian_bounds(const Matrix& q, const EtaMap& eta, double r, const Vector& z) {
  const int m = static_cast<int>(q.rows());
  if (q.cols() != m || eta.m() != m || eta.k() != m || z.size() != m)
    throw ArgumentError("perturbed_gaussian_bounds: dimension mismatch");
  if (!(r > 0)) throw ArgumentError("perturbed_gaussian_bounds: r must be positive");
  const auto [lmin, lmax] = eigen_extremes(q);
  if (!(lmin > 0)) throw DegeneracyError("perturbed_gaussian_bounds: Q is not positive definite", lmin);
  GaussianBounds g;
  const EtaConstants c = eta_constants(eta, 16 * r);
  const double need = std::sqrt(lmin / lmax) / (2.0 * m);
  if (c.c_star > need) {
    g.hypotheses_ok = false;
    g.violations.push_back("c_star(eta, 16r) = " + std::to_string(c.c_star) + " > sqrt(lam_min/lam_max)/(2m) = " +
                           std::to_string(need));
  }
  if (r > c.h_eta) {
    g.hypotheses_ok = false;
    g.violations.push_back("r = " + std::to_string(r) + " > h_eta = " + std::to_string(c.h_eta));
  }
  g.in_domain = z.norm() <= r;
  const double sqdet = std::sqrt(q.determinant());
  const double z2 = z.squaredNorm(), pi = std::numbers::pi;
  g.lower = std::exp(-8.0 * z2 / lmin) / (std::pow(8.0 * pi, 0.5 * m) * sqdet);
  g.upper = std::pow(2.0, 0.5 * m) * std::exp(-z2 / (32.0 * lmax)) / (std::pow(pi, 0.5 * m) * sqdet);
  return g;
}

struct HistogramPoint {
  Vector z;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool inside = false;
};

/// Localized density of G = Theta + eta(Theta), Theta ~ N(0, Q), weight
/// prod_i psi_r(Theta_i), estimated by box counts of side `bin` around each point.
inline std::vector<HistogramPoint> localized_histogram_check(const Matrix& q, const EtaMap& eta, double r,
                                                             const std::vector<Vector>& points,
                                                             std::size_t n_samples, std::uint64_t seed,
                                                             double bin) {
  const int m = static_cast<int>(q.rows());
  const Eigen::LLT<Matrix> llt(q);
  if (llt.info() != Eigen::Success) throw DegeneracyError("localized_histogram_check: Q not positive definite", 0.0);
  const Matrix l = llt.matrixL();
  std::vector<double> weight(n_samples);
  Matrix gs(m, static_cast<Eigen::Index>(n_samples));
  parallel_for(n_samples, [&](std::size_t k) {
    NormalStream normals(stream_seed(seed, k));
    Vector e(m);
    for (int i = 0; i < m; ++i) e[i] = normals();
    const Vector th = l * e;
    double w = 1.0;
    for (int i = 0; i < m; ++i) w *= mollifier(r, th[i]);
    weight[k] = w;
    gs.col(static_cast<Eigen::Index>(k)) = th + eta(th);
  });
  std::vector<HistogramPoint> out;
  const double vol = std::pow(bin, m);
  for (const auto& z : points) {
    CompensatedSum s;
    for (std::size_t k = 0; k < n_samples; ++k) {
      if (weight[k] == 0.0) continue;
      if (((gs.col(static_cast<Eigen::Index>(k)) - z).cwiseAbs().array() <= 0.5 * bin).all()) s.add(weight[k]);
    }
    HistogramPoint hp;
    hp.z = z;
    hp.estimate = s.value() / (static_cast<double>(n_samples) * vol);
    const GaussianBounds gb = perturbed_gaussian_bounds(q, eta, r, z);
    hp.lower = gb.lower;
    hp.upper = gb.upper;
    hp.inside = hp.estimate >= hp.lower && hp.estimate <= hp.upper;
    out.push_back(hp);
  }
  return out;
}

}  // namespace hypodens

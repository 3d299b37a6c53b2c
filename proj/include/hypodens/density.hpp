#pragma once

// Monte Carlo density of X_delta in the scaled coordinates F = alpha^{-1}(X_delta - center)
// and the small-time statistics built on it.

#include "hypodens/core.hpp"
#include "hypodens/fields.hpp"
#include "hypodens/model.hpp"
#include "hypodens/parallel.hpp"
#include "hypodens/rng.hpp"
#include "hypodens/sde.hpp"
#include "hypodens/stats.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace hypodens {

enum class Centering { X0, X0PlusBDelta };

inline const char* to_string(Centering c) { return c == Centering::X0 ? "x0" : "x0+bdelta"; }

/// Product-Gaussian KDE over samples stored column-wise (n x N).
struct DensityEstimate {
  Matrix samples;
  Vector bandwidth;
  double det_alpha = 1.0;
  AlphaFactor alpha;
  Vector center;
  Centering centering = Centering::X0;
  double delta = 0.0;
  std::size_t dropped = 0;  // paths lost to blow-up

  int n() const { return static_cast<int>(samples.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(samples.cols()); }

  /// Scott's rule N^{-1/(n+4)} * std, times `factor`.
  void set_bandwidth(double factor = 1.0) {
    const int nn = n();
    const double N = static_cast<double>(size());
    bandwidth.resize(nn);
    for (int i = 0; i < nn; ++i) {
      const double mu = samples.row(i).mean();
      const double var = (samples.row(i).array() - mu).square().sum() / std::max(1.0, N - 1);
      bandwidth[i] = factor * std::pow(N, -1.0 / (nn + 4)) * std::sqrt(var);
      if (!(bandwidth[i] > 0)) throw DataQualityError("degenerate sample coordinate " + std::to_string(i));
    }
  }

  double evaluate(const Vector& z) const {
    const int nn = n();
    const std::size_t N = size();
    double norm = std::pow(2 * std::numbers::pi, -0.5 * nn);
    for (int i = 0; i < nn; ++i) norm /= bandwidth[i];
    CompensatedSum s;
    for (std::size_t k = 0; k < N; ++k) {
      double e = 0.0;
      bool far = false;
      for (int i = 0; i < nn; ++i) {
        const double u = (z[i] - samples(i, static_cast<Eigen::Index>(k))) / bandwidth[i];
        if (std::abs(u) > 9.0) {
          far = true;
          break;
        }
        e += u * u;
      }
      if (!far) s.add(std::exp(-0.5 * e));
    }
    return norm * s.value() / static_cast<double>(N);
  }

  /// p_hat of X_delta at y: evaluate(alpha^{-1}(y - center)) / det alpha.
  double evaluate_original(const Vector& y) const {
    return evaluate(alpha.inverse_apply(y - center)) / det_alpha;
  }

  Vector sample_mean() const { return samples.rowwise().mean(); }
  Matrix sample_covariance() const {
    const Matrix c = samples.colwise() - sample_mean();
    return c * c.transpose() / std::max<double>(1.0, static_cast<double>(size()) - 1);
  }
};

/// alpha for (model, x0, delta), requiring the Hoermander diagnostic at (0, x0).
inline AlphaFactor scaled_alpha(const VectorFieldModel& model, const Vector& x0, double delta) {
  const DirectionalMatrix a = directional_matrix(model, 0.0, x0);
  a.require_full_row_rank("hoermander diagnostic");
  return alpha_factor(scale_matrix(a, delta));
}

/// Endpoint samples F = alpha^{-1}(X_delta - center), path k from stream_seed(seed, k).
/// Paths that blow up are dropped; more than 0.1% of them is a data-quality error.
inline DensityEstimate sample_scaled_endpoints(const VectorFieldModel& model, const Vector& x0, double delta,
                                               std::size_t n_paths, std::uint64_t seed, int steps_per_sub,
                                               Centering centering = Centering::X0PlusBDelta) {
  check_start(model, x0);
  if (!(delta > 0)) throw ArgumentError("delta must be positive");
  if (n_paths == 0) throw ArgumentError("n_paths must be positive");
  DensityEstimate est;
  est.delta = delta;
  est.alpha = scaled_alpha(model, x0, delta);
  est.det_alpha = est.alpha.det;
  est.centering = centering;
  est.center = x0;
  if (centering == Centering::X0PlusBDelta) est.center += model.drift_at(0.0, x0) * delta;
  const int n = model.n();
  Matrix raw(n, static_cast<Eigen::Index>(n_paths));
  std::vector<char> ok(n_paths, 1);
  const unsigned workers = worker_count();
  const std::size_t chunk = (n_paths + workers - 1) / workers;
  parallel_for(
      workers,
      [&](std::size_t w) {
        EulerWorkspace ws(model);
        const std::size_t lo = w * chunk, hi = std::min(n_paths, lo + chunk);
        for (std::size_t k = lo; k < hi; ++k) {
          try {
            const Vector x = integrate_endpoint(ws, x0, stream_seed(seed, k), delta, steps_per_sub);
            raw.col(static_cast<Eigen::Index>(k)) = est.alpha.inverse_apply(x - est.center);
          } catch (const BlowUpError&) {
            ok[k] = 0;
          }
        }
      },
      workers);
  std::size_t good = 0;
  for (char c : ok) good += c;
  est.dropped = n_paths - good;
  if (static_cast<double>(est.dropped) > 0.001 * static_cast<double>(n_paths))
    throw DataQualityError(std::to_string(est.dropped) + " of " + std::to_string(n_paths) + " paths blew up");
  est.samples.resize(n, static_cast<Eigen::Index>(good));
  Eigen::Index c = 0;
  for (std::size_t k = 0; k < n_paths; ++k)
    if (ok[k]) est.samples.col(c++) = raw.col(static_cast<Eigen::Index>(k));
  est.set_bandwidth();
  return est;
}

/// KDE of `samples` (n x N) at z with Scott bandwidth.
inline double kde_density(const Matrix& samples, const Vector& z, double bandwidth_factor = 1.0) {
  if (samples.cols() < 2) throw ArgumentError("kde_density needs at least two samples");
  DensityEstimate e;
  e.samples = samples;
  e.set_bandwidth(bandwidth_factor);
  return e.evaluate(z);
}

// ---------------------------------------------------------------------------

inline double halton(std::uint64_t index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

/// `count` deterministic low-discrepancy points in the closed unit ball of R^n.
inline std::vector<Vector> ball_mesh(int n, std::size_t count) {
  static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  if (n <= 0 || n > 12) throw ConfigError("ball_mesh supports 1 <= n <= 12");
  if (count == 0) throw ConfigError("ball mesh is empty");
  std::vector<Vector> pts;
  Vector u(n);
  for (std::uint64_t idx = 1; pts.size() < count; ++idx) {
    for (int i = 0; i < n; ++i) u[i] = 2.0 * halton(idx, primes[i]) - 1.0;
    if (u.squaredNorm() <= 1.0) pts.push_back(u);
  }
  return pts;
}

inline constexpr double kDensityFloor = 10 * std::numeric_limits<double>::epsilon();

struct DiagonalRow {
  double delta = 0.0;
  double det_alpha = 0.0;
  double p_hat = 0.0;
  bool censored = false;
};

struct DiagonalExponent {
  std::vector<DiagonalRow> rows;
  LinearFit fit;                // log p_hat against log delta
  double expected = 0.0;        // -(n - dim/2)
};

/// p_hat_{X_delta}(x0 + b delta) from an estimate centered at x0 + b delta.
inline double diagonal_value(const DensityEstimate& est) {
  return est.evaluate(Vector::Zero(est.n())) / est.det_alpha;
}

inline DiagonalExponent diagonal_exponent_from(const VectorFieldModel& model, const Vector& x0,
                                               const std::vector<const DensityEstimate*>& estimates) {
  DiagonalExponent out;
  out.expected = -diagonal_exponent_theory(model, x0);
  std::vector<double> xs, ys;
  for (const DensityEstimate* e : estimates) {
    if (e->centering != Centering::X0PlusBDelta)
      throw ArgumentError("diagonal exponent needs estimates centered at x0 + b delta");
    DiagonalRow r;
    r.delta = e->delta;
    r.det_alpha = e->det_alpha;
    r.p_hat = diagonal_value(*e);
    r.censored = !(r.p_hat * e->det_alpha > kDensityFloor);
    if (!r.censored) {
      xs.push_back(r.delta);
      ys.push_back(r.p_hat);
    }
    out.rows.push_back(r);
  }
  if (xs.size() < 2) throw DataQualityError("diagonal exponent: fewer than two uncensored deltas");
  out.fit = fit_loglog(xs, ys);
  return out;
}

inline DiagonalExponent diagonal_exponent(const VectorFieldModel& model, const Vector& x0,
                                          const std::vector<double>& delta_grid, std::size_t n_paths,
                                          std::uint64_t seed, int steps_per_sub) {
  if (delta_grid.size() < 4) throw ArgumentError("diagonal_exponent needs at least 4 deltas");
  std::vector<DensityEstimate> ests;
  for (double delta : delta_grid)
    ests.push_back(sample_scaled_endpoints(model, x0, delta, n_paths, seed, steps_per_sub));
  std::vector<const DensityEstimate*> ptrs;
  for (const auto& e : ests) ptrs.push_back(&e);
  return diagonal_exponent_from(model, x0, ptrs);
}

struct MeshRow {
  double delta = 0.0;
  std::size_t mesh_id = 0;
  double norm_a_delta = 0.0;
  double p_hat = 0.0;
  double normalized_stat = 0.0;
};

struct LowerBoundResult {
  double delta = 0.0;
  double min_normalized = 0.0;
  std::vector<MeshRow> mesh;
};

/// min over {|y - center|_{A_delta} <= r} (mesh of `mesh_size` points, plus the
/// center) of delta^{exponent} p_hat_{X_delta}(y).
inline LowerBoundResult lower_bound_stat(const DensityEstimate& est, double r, double exponent,
                                         std::size_t mesh_size = 200) {
  if (!(r >= 0)) throw ConfigError("lower bound radius must be non-negative");
  LowerBoundResult out;
  out.delta = est.delta;
  out.min_normalized = std::numeric_limits<double>::infinity();
  std::vector<Vector> pts{Vector::Zero(est.n())};
  for (auto& u : ball_mesh(est.n(), mesh_size)) pts.push_back(r * u);
  const double scale = std::pow(est.delta, exponent) / est.det_alpha;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    MeshRow row;
    row.delta = est.delta;
    row.mesh_id = i;
    row.norm_a_delta = pts[i].norm();
    const double pf = est.evaluate(pts[i]);
    row.p_hat = pf / est.det_alpha;
    row.normalized_stat = pf * scale;
    out.min_normalized = std::min(out.min_normalized, row.normalized_stat);
    out.mesh.push_back(row);
  }
  return out;
}

struct TailResult {
  double delta = 0.0;
  double p_exponent = 0.0;
  double sup_stat = 0.0;              // around x0
  double sup_stat_recentered = 0.0;   // around x0 + b delta
  double recenter_ratio = 1.0;        // max/min of the two
  double b_norm = 0.0;                // |b delta|_{A_delta}
  double exp_c = std::nan("");        // fitted decay scale; nan if not fittable
  double exp_stat = std::nan("");
  std::vector<MeshRow> mesh;
};

/// sup over a mesh of the ball of radius `radius` (in A_delta norm) of
/// delta^{exponent} p_hat(y) (1 + |y - x0|_{A_delta}^p), plus the same around x0 + b delta.
inline TailResult tail_stat(const DensityEstimate& est, const Vector& x0, const Vector& b0, double p,
                            double exponent, double radius = 3.0, std::size_t mesh_size = 200) {
  if (!(p >= 2)) throw ArgumentError("tail check needs p >= 2");
  TailResult out;
  out.delta = est.delta;
  out.p_exponent = p;
  std::vector<Vector> pts{Vector::Zero(est.n())};
  for (auto& u : ball_mesh(est.n(), mesh_size)) pts.push_back(radius * u);
  const double dpow = std::pow(est.delta, exponent);
  const Vector shift = b0 * est.delta;
  out.b_norm = est.alpha.inverse_apply(shift).norm();
  std::vector<double> rad, logp;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vector& w = pts[i];
    const double a = w.norm();
    const double ph = est.evaluate_original(x0 + est.alpha.apply(w));
    const double ph2 = est.evaluate_original(x0 + shift + est.alpha.apply(w));
    MeshRow row;
    row.delta = est.delta;
    row.mesh_id = i;
    row.norm_a_delta = a;
    row.p_hat = ph;
    row.normalized_stat = dpow * ph * (1 + std::pow(a, p));
    out.sup_stat = std::max(out.sup_stat, row.normalized_stat);
    out.sup_stat_recentered = std::max(out.sup_stat_recentered, dpow * ph2 * (1 + std::pow(a, p)));
    out.mesh.push_back(row);
    if (ph * est.det_alpha > kDensityFloor) {
      rad.push_back(a);
      logp.push_back(std::log(ph));
    }
  }
  if (out.sup_stat > 0 && out.sup_stat_recentered > 0)
    out.recenter_ratio = std::max(out.sup_stat, out.sup_stat_recentered) /
                         std::min(out.sup_stat, out.sup_stat_recentered);
  if (rad.size() >= 3) {
    const LinearFit f = fit_line(rad, logp);
    if (f.slope < 0) {
      out.exp_c = -1.0 / f.slope;
      out.exp_stat = 0.0;
      for (const auto& row : out.mesh)
        out.exp_stat = std::max(out.exp_stat, dpow * row.p_hat * std::exp(row.norm_a_delta / out.exp_c));
    }
  }
  return out;
}

}  // namespace hypodens

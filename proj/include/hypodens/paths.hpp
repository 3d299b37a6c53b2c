#pragma once

// Brownian paths on the grid aligned with s_k = k*delta/d, their sub-interval
// increments and iterated integrals, the Gaussian block vector Theta with its
// conditional covariance Q, and the localization quantities built on them.

#include "hypodens/core.hpp"
#include "hypodens/parallel.hpp"
#include "hypodens/rng.hpp"
#include "hypodens/stats.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace hypodens {

/// d-dimensional Brownian path W on [0, delta], sampled on a uniform grid of
/// steps_per_sub * d steps so that every s_k = k delta / d is a grid point.
struct BrownianGrid {
  int d = 0;
  double delta = 0.0;
  int steps_per_sub = 0;
  std::uint64_t seed = 0;
  Matrix values;  // (steps_per_sub*d + 1) x d, row k is W at time k*step()

  int total_steps() const { return steps_per_sub * d; }
  double step() const { return delta / total_steps(); }
  /// Grid row of s_k.
  int sub_index(int k) const { return k * steps_per_sub; }
  double time(int row) const { return row * step(); }
  /// B_t = delta^{-1/2} W_{t delta} at grid row `row` (t = row / total_steps()).
  double rescaled(int row, int j) const { return values(row, j) / std::sqrt(delta); }
  Vector endpoint() const { return values.row(total_steps()).transpose(); }

  /// Same path observed on a grid `factor` times coarser.
  BrownianGrid coarsen(int factor) const {
    if (factor <= 0 || steps_per_sub % factor != 0)
      throw ArgumentError("coarsen: factor must divide steps_per_sub");
    BrownianGrid g = *this;
    g.steps_per_sub = steps_per_sub / factor;
    g.values.resize(g.total_steps() + 1, d);
    for (int r = 0; r <= g.total_steps(); ++r) g.values.row(r) = values.row(r * factor);
    return g;
  }
};

inline void validate_grid_args(int d, double delta, int steps_per_sub) {
  if (d <= 0) throw ArgumentError("sample_path: d must be positive");
  if (!(delta > 0)) throw ArgumentError("sample_path: delta must be positive");
  if (steps_per_sub < 8) throw ArgumentError("sample_path: steps_per_sub must be >= 8");
}

/// Fills `grid` in place from a normal stream (reuses its storage).
inline void fill_path(BrownianGrid& grid, NormalStream& normals) {
  const int total = grid.total_steps();
  grid.values.resize(total + 1, grid.d);
  grid.values.row(0).setZero();
  const double sh = std::sqrt(grid.step());
  for (int r = 0; r < total; ++r)
    for (int j = 0; j < grid.d; ++j) grid.values(r + 1, j) = grid.values(r, j) + sh * normals();
}

/// Deterministic in `seed`; distinct seeds give independent streams.
inline BrownianGrid sample_path(std::uint64_t seed, int d, double delta, int steps_per_sub) {
  validate_grid_args(d, delta, steps_per_sub);
  BrownianGrid g;
  g.d = d;
  g.delta = delta;
  g.steps_per_sub = steps_per_sub;
  g.seed = seed;
  NormalStream normals(seed);
  fill_path(g, normals);
  return g;
}

/// Builds a grid from explicit path values (row 0 must be zero).
inline BrownianGrid path_from_values(Matrix values, double delta, int steps_per_sub) {
  BrownianGrid g;
  g.d = static_cast<int>(values.cols());
  g.delta = delta;
  g.steps_per_sub = steps_per_sub;
  if (values.rows() != g.total_steps() + 1) throw ArgumentError("path_from_values: wrong row count");
  g.values = std::move(values);
  return g;
}

/// Replaces coordinate `p` of `base` with a fresh Brownian coordinate drawn from
/// `seed`, keeping every other coordinate frozen.
inline BrownianGrid resample_coordinate(const BrownianGrid& base, int p, std::uint64_t seed) {
  BrownianGrid g = base;
  g.seed = seed;
  NormalStream normals(seed);
  const double sh = std::sqrt(g.step());
  g.values(0, p) = 0.0;
  for (int r = 0; r < g.total_steps(); ++r) g.values(r + 1, p) = g.values(r, p) + sh * normals();
  return g;
}

// ---------------------------------------------------------------------------

/// Delta_k^i and Delta_k^{i,j} for sub-intervals k = 0..d-1.
struct IteratedIntegrals {
  Matrix inc;                 // inc(k, i) = W^i_{s_{k+1}} - W^i_{s_k}
  std::vector<Matrix> iter;   // iter[k](i, j) = int_{s_k}^{s_{k+1}} (W^i - W^i_{s_k}) o dW^j

  int d() const { return static_cast<int>(inc.cols()); }
};

/// Off-diagonal iterated integrals by left-point sums (Ito equals Stratonovich
/// there); diagonal ones by the exact identity Delta^{i,i} = (Delta^i)^2 / 2.
inline IteratedIntegrals increments_and_iterated(const BrownianGrid& path) {
  const int d = path.d, n = path.steps_per_sub;
  IteratedIntegrals out;
  out.inc.resize(d, d);
  out.iter.assign(d, Matrix::Zero(d, d));
  for (int k = 0; k < d; ++k) {
    const int r0 = path.sub_index(k);
    for (int i = 0; i < d; ++i) out.inc(k, i) = path.values(r0 + n, i) - path.values(r0, i);
    Matrix& it = out.iter[k];
    for (int r = r0; r < r0 + n; ++r)
      for (int i = 0; i < d; ++i) {
        const double wi = path.values(r, i) - path.values(r0, i);
        for (int j = 0; j < d; ++j) {
          if (j == i) continue;
          it(i, j) += wi * (path.values(r + 1, j) - path.values(r, j));
        }
      }
    for (int i = 0; i < d; ++i) it(i, i) = 0.5 * out.inc(k, i) * out.inc(k, i);
  }
  return out;
}

/// Theta_{l(i,p)} = Delta_p^{i,p} / delta for i != p, Delta_p^p / sqrt(delta)
/// for i == p, with l(i,p) = p*d + i.
inline Vector theta_vector(const IteratedIntegrals& ii, double delta) {
  const int d = ii.d();
  Vector th(d * d);
  const double sq = std::sqrt(delta);
  for (int p = 0; p < d; ++p)
    for (int i = 0; i < d; ++i)
      th[p * d + i] = (i == p) ? ii.inc(p, p) / sq : ii.iter[p](i, p) / delta;
  return th;
}

inline int theta_diag_index(int p, int d) { return p * d + p; }

// ---------------------------------------------------------------------------

/// Conditional covariance of Theta given the off-block coordinates.
struct ConditionalCovariance {
  std::vector<Matrix> blocks;  // Q_p, d x d, indexed like Theta_(p)
  Matrix full;                 // block diagonal m x m
  Vector det_blocks;
  double det = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double frobenius_scaled = 0.0;  // |Q|_l = (sum Q_ij^2 / m)^{1/2}
};

/// Q_p from the rescaled path B by left-point quadrature on the fine grid;
/// Q_p^{p,p} = 1/d is set exactly.
inline ConditionalCovariance conditional_covariance(const BrownianGrid& path) {
  const int d = path.d, n = path.steps_per_sub, m = d * d;
  const double h = 1.0 / path.total_steps();
  const double inv_sq = 1.0 / std::sqrt(path.delta);
  ConditionalCovariance q;
  q.blocks.assign(d, Matrix::Zero(d, d));
  Vector b(d);
  for (int p = 0; p < d; ++p) {
    const int r0 = path.sub_index(p);
    Matrix& qp = q.blocks[p];
    for (int r = r0; r < r0 + n; ++r) {
      for (int j = 0; j < d; ++j) b[j] = (path.values(r, j) - path.values(r0, j)) * inv_sq;
      for (int i = 0; i < d; ++i) {
        if (i == p) continue;
        qp(p, i) += b[i] * h;
        for (int j = i; j < d; ++j) {
          if (j == p) continue;
          qp(i, j) += b[i] * b[j] * h;
        }
      }
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < i; ++j) qp(i, j) = qp(j, i);
    for (int i = 0; i < d; ++i) qp(i, p) = qp(p, i);
    qp(p, p) = 1.0 / d;
  }
  q.full = Matrix::Zero(m, m);
  q.det_blocks.resize(d);
  q.det = 1.0;
  q.lambda_min = std::numeric_limits<double>::infinity();
  q.lambda_max = -std::numeric_limits<double>::infinity();
  for (int p = 0; p < d; ++p) {
    q.full.block(p * d, p * d, d, d) = q.blocks[p];
    q.det_blocks[p] = q.blocks[p].determinant();
    q.det *= q.det_blocks[p];
    const auto [lo, hi] = eigen_extremes(q.blocks[p]);
    q.lambda_min = std::min(q.lambda_min, lo);
    q.lambda_max = std::max(q.lambda_max, hi);
  }
  q.frobenius_scaled = std::sqrt(q.full.squaredNorm() / m);
  return q;
}

// ---------------------------------------------------------------------------

/// Reference point of the cross integrals in q_p: the start of block p, or the
/// start of block i (the literal alternative reading).
enum class QpConvention { PBlock, IBlock };

struct SupportQuantities {
  Vector q_p;          // per block
  double q = 0.0;      // sum_p q_p
  Vector sup_terms;    // sup over block p of sum_{j != p} |B^j_t - B^j_{(p-1)/d}|
};

inline SupportQuantities support_quantities(const BrownianGrid& path,
                                            QpConvention conv = QpConvention::PBlock) {
  const int d = path.d, n = path.steps_per_sub;
  SupportQuantities s;
  s.q_p = Vector::Zero(d);
  s.sup_terms = Vector::Zero(d);
  auto B = [&](int row, int j) { return path.rescaled(row, j); };
  for (int p = 0; p < d; ++p) {
    const int r0 = path.sub_index(p), r1 = r0 + n;
    double qp = 0.0;
    for (int j = 0; j < d; ++j)
      if (j != p) qp += std::abs(B(r1, j) - B(r0, j));
    for (int j = 0; j < d; ++j) {
      if (j == p) continue;
      for (int i = 0; i < d; ++i) {
        if (i == p || i == j) continue;
        const int ref = conv == QpConvention::PBlock ? r0 : path.sub_index(i);
        double acc = 0.0;
        for (int r = r0; r < r1; ++r) acc += (B(r, j) - B(ref, j)) * (B(r + 1, i) - B(r, i));
        qp += std::abs(acc);
      }
    }
    double sup = 0.0;
    for (int r = r0; r <= r1; ++r) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j)
        if (j != p) acc += std::abs(B(r, j) - B(r0, j));
      sup = std::max(sup, acc);
    }
    s.q_p[p] = qp;
    s.sup_terms[p] = sup;
  }
  s.q = s.q_p.sum();
  return s;
}

// ---------------------------------------------------------------------------

/// psi_a(x) = 1 on |x| <= a, exp(1 - a^2 / (a^2 - (|x| - a)^2)) on a < |x| < 2a,
/// 0 beyond.
inline double mollifier(double a, double x) {
  if (!(a > 0)) throw ArgumentError("mollifier: a must be positive");
  const double ax = std::abs(x);
  if (ax <= a) return 1.0;
  if (ax >= 2 * a) return 0.0;
  const double u = ax - a;
  return std::exp(1.0 - a * a / (a * a - u * u));
}

struct LocalizationWeights {
  double u_tilde = 0.0;
  double u_bar = 0.0;
  bool in_lambda = false;
  std::vector<bool> in_lambda_p;
};

/// U~_eps = psi_{a1}(1/det Q) psi_{a2}(|Q|_l) psi_{a3}(q(B)) with
/// a1 = eps^{-d rho}, a2 = eps^{-2 rho}, a3 = d eps; U-bar_r = prod_i psi_r(Theta_i)
/// over all m coordinates; and the indicator of Lambda_{rho,eps}.
inline LocalizationWeights localization_weights(const ConditionalCovariance& q,
                                                const SupportQuantities& s, const Vector& theta,
                                                double eps, double rho, double r) {
  if (!(eps > 0) || !(rho > 0) || !(r > 0))
    throw ArgumentError("localization_weights: eps, rho, r must be positive");
  const int d = static_cast<int>(q.blocks.size());
  LocalizationWeights w;
  const double a1 = std::pow(eps, -d * rho), a2 = std::pow(eps, -2 * rho), a3 = d * eps;
  const double inv_det = q.det > 0 ? 1.0 / q.det : std::numeric_limits<double>::infinity();
  w.u_tilde = (std::isfinite(inv_det) ? mollifier(a1, inv_det) : 0.0) *
              mollifier(a2, q.frobenius_scaled) * mollifier(a3, s.q);
  w.u_bar = 1.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) w.u_bar *= mollifier(r, theta[i]);
  w.in_lambda_p.resize(d);
  w.in_lambda = true;
  for (int p = 0; p < d; ++p) {
    const bool in = q.det_blocks[p] >= std::pow(eps, rho) && s.sup_terms[p] <= std::pow(eps, -rho) &&
                    s.q_p[p] <= eps;
    w.in_lambda_p[p] = in;
    w.in_lambda = w.in_lambda && in;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Unit-horizon quantities: B is a d-dimensional Brownian motion on [0,1] whose
// last coordinate plays the distinguished role.

struct UnitHorizonSample {
  Matrix q;              // d x d: Q^{dd} = 1, Q^{dj} = int B^j, Q^{jp} = int B^j B^p
  double det = 0.0;
  double q_support = 0.0;  // sum_{i<d} |B^i_1| + sum_{j != d} |int_0^1 B^j dB^d|
  double sup_norm = 0.0;   // sup_t |B_t|
};

/// Evaluates the unit-horizon quantities on a path with delta = 1.
inline UnitHorizonSample unit_horizon_sample(const BrownianGrid& path) {
  const int d = path.d, total = path.total_steps();
  const int last = d - 1;
  const double h = 1.0 / total;
  UnitHorizonSample s;
  s.q = Matrix::Zero(d, d);
  Vector cross = Vector::Zero(d);
  for (int r = 0; r < total; ++r) {
    const double dlast = path.rescaled(r + 1, last) - path.rescaled(r, last);
    for (int j = 0; j < last; ++j) {
      const double bj = path.rescaled(r, j);
      s.q(last, j) += bj * h;
      for (int p = j; p < last; ++p) s.q(j, p) += bj * path.rescaled(r, p) * h;
      cross[j] += bj * dlast;
    }
    double nn = 0.0;
    for (int j = 0; j < d; ++j) nn += path.rescaled(r + 1, j) * path.rescaled(r + 1, j);
    s.sup_norm = std::max(s.sup_norm, std::sqrt(nn));
  }
  for (int j = 0; j < last; ++j) {
    s.q(j, last) = s.q(last, j);
    for (int p = 0; p < j; ++p) s.q(j, p) = s.q(p, j);
  }
  s.q(last, last) = 1.0;
  s.det = s.q.determinant();
  for (int i = 0; i < last; ++i) s.q_support += std::abs(path.rescaled(total, i));
  for (int j = 0; j < last; ++j) s.q_support += std::abs(cross[j]);
  return s;
}

inline bool in_upsilon(const UnitHorizonSample& s, double eps, double rho) {
  return s.det >= std::pow(eps, rho) && s.sup_norm <= std::pow(eps, -rho) && s.q_support <= eps;
}

struct SupportConfig {
  int d = 2;
  std::vector<double> eps_grid{0.1, 0.2, 0.3, 0.4};
  double rho = 4.0;
  std::size_t n_samples = 100000;
  std::uint64_t seed = 1;
  int steps_per_sub = 256;
  QpConvention qp_convention = QpConvention::PBlock;
};

struct SupportRow {
  double epsilon = 0.0;
  Proportion upsilon;
  Proportion lambda;
};

struct SupportStatistics {
  std::vector<SupportRow> rows;
  // log-log slopes over the non-censored epsilons; nan when < 2 points remain
  double upsilon_slope = std::nan("");
  double lambda_slope = std::nan("");
  std::vector<double> upsilon_censored;
  std::vector<double> lambda_censored;
};

/// Monte Carlo frequencies of Upsilon_{rho,eps} (unit horizon) and
/// Lambda_{rho,eps} (block structure) on the same paths.
inline SupportStatistics support_statistics(const SupportConfig& cfg) {
  if (cfg.eps_grid.empty()) throw ArgumentError("support_statistics: empty eps grid");
  for (double e : cfg.eps_grid)
    if (!(e > 0 && e < 1)) throw ArgumentError("support_statistics: eps must lie in (0,1)");
  if (!(cfg.rho > 0)) throw ArgumentError("support_statistics: rho must be positive");
  const std::size_t ne = cfg.eps_grid.size();
  // Per-sample bitmasks: bit e for Upsilon, bit 32+e for Lambda.
  std::vector<std::uint64_t> flags(cfg.n_samples, 0);
  const unsigned workers = worker_count();
  std::vector<BrownianGrid> scratch(workers);
  const std::size_t chunk = (cfg.n_samples + workers - 1) / workers;
  parallel_for(
      workers,
      [&](std::size_t w) {
        BrownianGrid& g = scratch[w];
        g.d = cfg.d;
        g.delta = 1.0;
        g.steps_per_sub = cfg.steps_per_sub;
        const std::size_t lo = w * chunk, hi = std::min(cfg.n_samples, lo + chunk);
        for (std::size_t k = lo; k < hi; ++k) {
          NormalStream normals(stream_seed(cfg.seed, k));
          fill_path(g, normals);
          const auto us = unit_horizon_sample(g);
          const auto cq = conditional_covariance(g);
          const auto sq = support_quantities(g, cfg.qp_convention);
          std::uint64_t f = 0;
          for (std::size_t e = 0; e < ne; ++e) {
            const double eps = cfg.eps_grid[e];
            if (in_upsilon(us, eps, cfg.rho)) f |= (1ULL << e);
            bool lam = true;
            for (int p = 0; p < cfg.d; ++p)
              lam = lam && cq.det_blocks[p] >= std::pow(eps, cfg.rho) &&
                    sq.sup_terms[p] <= std::pow(eps, -cfg.rho) && sq.q_p[p] <= eps;
            if (lam) f |= (1ULL << (32 + e));
          }
          flags[k] = f;
        }
      },
      workers);
  SupportStatistics out;
  std::vector<double> xu, yu, xl, yl;
  for (std::size_t e = 0; e < ne; ++e) {
    std::size_t hu = 0, hl = 0;
    for (auto f : flags) {
      hu += (f >> e) & 1ULL;
      hl += (f >> (32 + e)) & 1ULL;
    }
    SupportRow row;
    row.epsilon = cfg.eps_grid[e];
    row.upsilon = wilson(hu, cfg.n_samples);
    row.lambda = wilson(hl, cfg.n_samples);
    out.rows.push_back(row);
    if (hu > 0) {
      xu.push_back(row.epsilon);
      yu.push_back(row.upsilon.p_hat);
    } else {
      out.upsilon_censored.push_back(row.epsilon);
    }
    if (hl > 0) {
      xl.push_back(row.epsilon);
      yl.push_back(row.lambda.p_hat);
    } else {
      out.lambda_censored.push_back(row.epsilon);
    }
  }
  if (xu.size() >= 2) out.upsilon_slope = fit_loglog(xu, yu).slope;
  if (xl.size() >= 2) out.lambda_slope = fit_loglog(xl, yl).slope;
  return out;
}

struct InverseMomentRow {
  double p = 0.0;
  std::size_t n = 0;
  double mean = 0.0;
  double half1 = 0.0;
  double half2 = 0.0;
  bool halves_agree = false;  // |half1 - half2| <= 0.2 * max(half1, half2)
};

/// Empirical E|det Q|^{-p} for the unit-horizon matrix Q, one row per p, all
/// p on the same samples.
inline std::vector<InverseMomentRow> detq_inverse_moments(int d, const std::vector<double>& powers,
                                                          std::size_t n_samples, std::uint64_t seed,
                                                          int steps_per_sub = 256) {
  if (d <= 0) throw ArgumentError("detq_inverse_moments: d must be positive");
  if (n_samples < 2) throw ArgumentError("detq_inverse_moments: need at least 2 samples");
  std::vector<double> dets(n_samples, 1.0);
  if (d > 1) {
    parallel_for(n_samples, [&](std::size_t k) {
      const auto g = sample_path(stream_seed(seed, k), d, 1.0, steps_per_sub);
      dets[k] = std::abs(unit_horizon_sample(g).det);
    });
  }
  std::vector<InverseMomentRow> rows;
  const std::size_t half = n_samples / 2;
  for (double p : powers) {
    CompensatedSum all, h1, h2;
    for (std::size_t k = 0; k < n_samples; ++k) {
      const double v = std::pow(dets[k], -p);
      all.add(v);
      (k < half ? h1 : h2).add(v);
    }
    InverseMomentRow r;
    r.p = p;
    r.n = n_samples;
    r.mean = all.value() / n_samples;
    r.half1 = h1.value() / half;
    r.half2 = h2.value() / (n_samples - half);
    r.halves_agree = std::abs(r.half1 - r.half2) <= 0.2 * std::max(r.half1, r.half2);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace hypodens

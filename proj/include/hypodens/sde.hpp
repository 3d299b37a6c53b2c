#pragma once

// Stratonovich SDE integration by Euler-Maruyama on the Ito form, the tangent
// flow Y and its inverse Z, and the reduced Malliavin covariance.

#include "hypodens/core.hpp"
#include "hypodens/fields.hpp"
#include "hypodens/model.hpp"
#include "hypodens/parallel.hpp"
#include "hypodens/paths.hpp"
#include "hypodens/rng.hpp"
#include "hypodens/stats.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace hypodens {

/// Scratch space for one integration; reused across paths to keep the inner
/// loop allocation free.
class EulerWorkspace {
public:
  explicit EulerWorkspace(const VectorFieldModel& model)
      : model_(&model),
        n_(model.n()),
        d_(model.d()),
        sig_(n_, d_),
        jac_(d_, Matrix(n_, n_)),
        hess_(d_),
        corr_(n_),
        jb_(n_, n_),
        next_(n_),
        tmp_(n_, n_),
        acc_(n_, n_) {}

  const VectorFieldModel& model() const { return *model_; }

  /// Evaluates sigma and the Ito drift at (t, x).
  void evaluate(double t, const Vector& x) { model_->ito_terms(t, x, sig_, corr_); }

  /// One Euler-Maruyama step of the Ito form of the equation; requires evaluate(t, x).
  /// dX = (b + 1/2 sum_k J_k sigma_k) h + sum_k sigma_k dW^k
  void step_x(const Vector& x, const double* dw, double h, Vector& out) const {
    const double* sp = sig_.data();
    for (int a = 0; a < n_; ++a) {
      double v = x[a] + h * corr_[a];
      for (int k = 0; k < d_; ++k) v += sp[k * n_ + a] * dw[k];
      out[a] = v;
    }
  }

  /// Additionally loads the Jacobians, second derivatives and the drift Jacobian.
  void evaluate_flow_terms(double t, const Vector& x) {
    model_->jac_drift(t, x, jb_);
    for (int k = 0; k < d_; ++k) {
      model_->jac_sigma(k, t, x, jac_[k]);
      model_->hess_sigma(k, t, x, hess_[k].raw);
      Matrix& hk = hess_[k].contracted;
      hk.resize(n_, n_);
      for (int a = 0; a < n_; ++a) hk.row(a) = (hess_[k].raw[a] * sig_.col(k)).transpose();
    }
  }

  /// Y <- Y + (J_b + 1/2 sum (H_k + J_k^2)) Y h + sum J_k Y dW^k
  void step_y(Matrix& y, const double* dw, double h) {
    acc_ = jb_;
    for (int k = 0; k < d_; ++k) {
      acc_ += 0.5 * hess_[k].contracted;
      acc_.noalias() += 0.5 * jac_[k] * jac_[k];
    }
    acc_ *= h;
    for (int k = 0; k < d_; ++k) acc_ += dw[k] * jac_[k];
    tmp_.noalias() = acc_ * y;
    y += tmp_;
  }

  /// Z <- Z + Z(-J_b + 1/2 sum (J_k^2 - H_k)) h - sum Z J_k dW^k
  void step_z(Matrix& z, const double* dw, double h) {
    acc_ = -jb_;
    for (int k = 0; k < d_; ++k) {
      acc_ -= 0.5 * hess_[k].contracted;
      acc_.noalias() += 0.5 * jac_[k] * jac_[k];
    }
    acc_ *= h;
    for (int k = 0; k < d_; ++k) acc_ -= dw[k] * jac_[k];
    tmp_.noalias() = z * acc_;
    z += tmp_;
  }

  const Matrix& sigma_matrix() const { return sig_; }
  const Matrix& jacobian(int k) const { return jac_[k]; }
  Vector& next() { return next_; }

private:
  struct Hess {
    std::vector<Matrix> raw;
    Matrix contracted;  // (a, b) -> sum_c d_b d_c sigma^a sigma^c
  };
  const VectorFieldModel* model_;
  int n_, d_;
  Matrix sig_;
  std::vector<Matrix> jac_;
  std::vector<Hess> hess_;
  Vector corr_;
  Matrix jb_;
  Vector next_;
  Matrix tmp_, acc_;
};

struct SdeOptions {
  bool tangent = false;
  double flow_tol = 1e-4;
  bool check_flow = true;
};

struct SdeSolution {
  double delta = 0.0;
  int steps = 0;
  Matrix x_path;               // (steps+1) x n
  std::vector<Matrix> y_path;  // empty unless tangent flows were requested
  std::vector<Matrix> z_path;
  double max_flow_error = 0.0;  // max_t |Z_t Y_t - Id| (Frobenius)

  double time(int row) const { return delta * row / steps; }
  Vector endpoint() const { return x_path.row(steps).transpose(); }
};

inline void check_start(const VectorFieldModel& model, const Vector& x0) {
  if (x0.size() != model.n()) throw ArgumentError("x0 has the wrong dimension");
  if (!x0.allFinite()) throw ArgumentError("x0 must be finite");
}

inline void check_driving(const VectorFieldModel& model, const BrownianGrid& path) {
  if (path.d != model.d()) throw ArgumentError("path dimension differs from the model's d");
}

inline SdeSolution integrate(const VectorFieldModel& model, const Vector& x0, const BrownianGrid& path,
                             const SdeOptions& opt = {}) {
  check_start(model, x0);
  check_driving(model, path);
  const int n = model.n(), d = model.d(), steps = path.total_steps();
  const double h = path.step();
  EulerWorkspace ws(model);
  SdeSolution sol;
  sol.delta = path.delta;
  sol.steps = steps;
  sol.x_path.resize(steps + 1, n);
  sol.x_path.row(0) = x0.transpose();
  Matrix y, z;
  if (opt.tangent) {
    y = Matrix::Identity(n, n);
    z = Matrix::Identity(n, n);
    sol.y_path.reserve(steps + 1);
    sol.z_path.reserve(steps + 1);
    sol.y_path.push_back(y);
    sol.z_path.push_back(z);
  }
  Vector x = x0;
  std::vector<double> dw(d);
  for (int r = 0; r < steps; ++r) {
    const double t = r * h;
    for (int k = 0; k < d; ++k) dw[k] = path.values(r + 1, k) - path.values(r, k);
    ws.evaluate(t, x);
    if (opt.tangent) {
      ws.evaluate_flow_terms(t, x);
      ws.step_y(y, dw.data(), h);
      ws.step_z(z, dw.data(), h);
    }
    ws.step_x(x, dw.data(), h, ws.next());
    x = ws.next();
    if (!x.allFinite())
      throw BlowUpError("state became non-finite at grid index " + std::to_string(r + 1), r + 1);
    sol.x_path.row(r + 1) = x.transpose();
    if (opt.tangent) {
      if (!y.allFinite() || !z.allFinite())
        throw BlowUpError("tangent flow became non-finite at grid index " + std::to_string(r + 1), r + 1);
      sol.y_path.push_back(y);
      sol.z_path.push_back(z);
      sol.max_flow_error =
          std::max(sol.max_flow_error, (z * y - Matrix::Identity(n, n)).norm());
    }
  }
  if (opt.tangent && opt.check_flow && sol.max_flow_error > opt.flow_tol)
    throw AccuracyError("|Z Y - Id| = " + std::to_string(sol.max_flow_error) + " exceeds flow_tol " +
                        std::to_string(opt.flow_tol) + "; use a finer grid");
  return sol;
}

/// Endpoint only. Consumes the normal stream exactly like sample_path(seed, ...)
/// followed by integrate(), so both give the same X_delta up to rounding.
inline Vector integrate_endpoint(EulerWorkspace& ws, const Vector& x0, std::uint64_t seed, double delta,
                                 int steps_per_sub) {
  const VectorFieldModel& model = ws.model();
  const int d = model.d(), steps = steps_per_sub * d;
  const double h = delta / steps, sh = std::sqrt(h);
  NormalStream normals(seed);
  Vector x = x0;
  double dw[64];
  if (d > 64) throw ArgumentError("integrate_endpoint supports d <= 64");
  for (int r = 0; r < steps; ++r) {
    for (int k = 0; k < d; ++k) dw[k] = sh * normals();
    ws.evaluate(r * h, x);
    ws.step_x(x, dw, h, ws.next());
    x.swap(ws.next());
    if (!x.allFinite())
      throw BlowUpError("state became non-finite at grid index " + std::to_string(r + 1), r + 1);
  }
  return x;
}

/// Y and Z along the path; throws AccuracyError when |Z Y - Id| > flow_tol.
inline SdeSolution tangent_flows(const VectorFieldModel& model, const Vector& x0, const BrownianGrid& path,
                                 double flow_tol = 1e-4) {
  SdeOptions opt;
  opt.tangent = true;
  opt.flow_tol = flow_tol;
  return integrate(model, x0, path, opt);
}

struct MalliavinCovariance {
  Matrix integrated;  // int_0^delta Z sigma sigma^T Z^T ds
  Matrix gamma_bar;   // alpha^{-1} integrated alpha^{-T}
  double lambda_min = 0.0;
};

inline MalliavinCovariance finish_malliavin(Matrix integrated, const AlphaFactor& alpha) {
  MalliavinCovariance out;
  integrated = 0.5 * (integrated + integrated.transpose()).eval();
  const Matrix ai = alpha.inverse();
  out.gamma_bar = ai * integrated * ai.transpose();
  out.gamma_bar = 0.5 * (out.gamma_bar + out.gamma_bar.transpose()).eval();
  out.integrated = std::move(integrated);
  out.lambda_min = eigen_extremes(out.gamma_bar).first;
  return out;
}

/// gamma_bar_F = alpha^{-1} (int Z sigma sigma^T Z^T ds) alpha^{-T}, trapezoidal rule.
inline MalliavinCovariance reduced_malliavin_covariance(const VectorFieldModel& model, const SdeSolution& sol,
                                                        const AlphaFactor& alpha) {
  if (sol.z_path.empty()) throw ArgumentError("reduced_malliavin_covariance needs tangent flows");
  const int n = model.n(), d = model.d();
  const double h = sol.delta / sol.steps;
  Matrix s(n, d), acc = Matrix::Zero(n, n);
  for (int r = 0; r <= sol.steps; ++r) {
    const Vector x = sol.x_path.row(r).transpose();
    for (int k = 0; k < d; ++k) s.col(k) = model.sigma_at(k, sol.time(r), x);
    const Matrix zs = sol.z_path[r] * s;
    const double w = (r == 0 || r == sol.steps) ? 0.5 * h : h;
    acc.noalias() += w * zs * zs.transpose();
  }
  return finish_malliavin(std::move(acc), alpha);
}

/// Streaming variant for batches: integrates X and Z from `seed` without storing the path.
inline MalliavinCovariance malliavin_streaming(EulerWorkspace& ws, const Vector& x0, std::uint64_t seed,
                                               double delta, int steps_per_sub, const AlphaFactor& alpha) {
  const VectorFieldModel& model = ws.model();
  const int n = model.n(), d = model.d(), steps = steps_per_sub * d;
  const double h = delta / steps, sh = std::sqrt(h);
  NormalStream normals(seed);
  Vector x = x0;
  Matrix z = Matrix::Identity(n, n), acc = Matrix::Zero(n, n), zs(n, d);
  double dw[64];
  if (d > 64) throw ArgumentError("malliavin_streaming supports d <= 64");
  for (int r = 0; r <= steps; ++r) {
    ws.evaluate(r * h, x);
    zs.noalias() = z * ws.sigma_matrix();
    acc.noalias() += ((r == 0 || r == steps) ? 0.5 * h : h) * zs * zs.transpose();
    if (r == steps) break;
    for (int k = 0; k < d; ++k) dw[k] = sh * normals();
    ws.evaluate_flow_terms(r * h, x);
    ws.step_z(z, dw, h);
    ws.step_x(x, dw, h, ws.next());
    x.swap(ws.next());
    if (!x.allFinite() || !z.allFinite())
      throw BlowUpError("state became non-finite at grid index " + std::to_string(r + 1), r + 1);
  }
  return finish_malliavin(std::move(acc), alpha);
}

struct CovarianceRow {
  double delta = 0.0;
  std::size_t n_paths = 0;
  double q05 = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0;
  double truncated_inverse_moment = 0.0;  // E[min(lambda^{-1}, 1e12)]
};

/// Quantiles of lambda_*(gamma_bar_F) per delta, path k drawn from stream_seed(seed, k).
inline std::vector<CovarianceRow> covariance_statistics(const VectorFieldModel& model, const Vector& x0,
                                                        const std::vector<double>& delta_grid,
                                                        std::size_t n_paths, std::uint64_t seed,
                                                        int steps_per_sub) {
  check_start(model, x0);
  std::vector<CovarianceRow> rows;
  const DirectionalMatrix a = directional_matrix(model, 0.0, x0);
  for (double delta : delta_grid) {
    const AlphaFactor alpha = alpha_factor(scale_matrix(a, delta));
    std::vector<double> lam(n_paths);
    const unsigned workers = worker_count();
    const std::size_t chunk = (n_paths + workers - 1) / workers;
    parallel_for(
        workers,
        [&](std::size_t w) {
          EulerWorkspace ws(model);
          const std::size_t lo = w * chunk, hi = std::min(n_paths, lo + chunk);
          for (std::size_t k = lo; k < hi; ++k)
            lam[k] = malliavin_streaming(ws, x0, stream_seed(seed, k), delta, steps_per_sub, alpha).lambda_min;
        },
        workers);
    CovarianceRow row;
    row.delta = delta;
    row.n_paths = n_paths;
    row.q05 = quantile(lam, 0.05);
    row.q25 = quantile(lam, 0.25);
    row.median = quantile(lam, 0.5);
    row.q75 = quantile(lam, 0.75);
    CompensatedSum inv;
    for (double l : lam) inv.add(l > 1e-12 ? 1.0 / l : 1e12);
    row.truncated_inverse_moment = inv.value() / static_cast<double>(n_paths);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------

/// A field phi(t, x) used in the Ito representation check.
struct NamedField {
  std::string name;
  std::function<Vector(double, const Vector&)> eval;
};

/// "sigma:j" or "bracket:i,p" (0-based).
inline NamedField named_field(const VectorFieldModel& model, const std::string& spec) {
  NamedField f;
  f.name = spec;
  auto bad = [&] { return CapabilityError("unsupported field '" + spec + "' (use sigma:j or bracket:i,p)"); };
  if (spec.rfind("sigma:", 0) == 0) {
    int j = -1;
    try {
      j = std::stoi(spec.substr(6));
    } catch (...) {
      throw bad();
    }
    if (j < 0 || j >= model.d()) throw bad();
    f.eval = [&model, j](double t, const Vector& x) { return model.sigma_at(j, t, x); };
    return f;
  }
  if (spec.rfind("bracket:", 0) == 0) {
    const auto comma = spec.find(',', 8);
    if (comma == std::string::npos) throw bad();
    int i = -1, p = -1;
    try {
      i = std::stoi(spec.substr(8, comma - 8));
      p = std::stoi(spec.substr(comma + 1));
    } catch (...) {
      throw bad();
    }
    if (i < 0 || p < 0 || i >= model.d() || p >= model.d()) throw bad();
    f.eval = [&model, i, p](double t, const Vector& x) { return lie_bracket(model, i, p, t, x); };
    return f;
  }
  throw bad();
}

struct ItoCheck {
  double sup_residual = 0.0;
  Vector lhs;  // Z_delta phi(delta, X_delta)
  Vector rhs;
};

/// Compares Z_t phi(t, X_t) with
///   phi(0, x0) + int Z sum_k [sigma_k, phi] dW^k
///              + int Z ([b, phi] + 1/2 sum_k [sigma_k, [sigma_k, phi]] + d_s phi) ds
/// along the path (left-point sums); nested brackets by central differences.
inline ItoCheck ito_representation_check(const VectorFieldModel& model, const Vector& x0,
                                         const BrownianGrid& path, const NamedField& phi,
                                         double fd_h = 1e-4) {
  SdeOptions opt;
  opt.tangent = true;
  opt.check_flow = false;
  const SdeSolution sol = integrate(model, x0, path, opt);
  const int d = model.d(), steps = sol.steps;
  const double h = path.step();
  auto sig = [&model](int k) {
    return [&model, k](double t, const Vector& x) { return model.sigma_at(k, t, x); };
  };
  auto drift = [&model](double t, const Vector& x) { return model.drift_at(t, x); };
  ItoCheck out;
  Vector rhs = phi.eval(0.0, x0);
  for (int r = 0; r <= steps; ++r) {
    const double t = sol.time(r);
    const Vector x = sol.x_path.row(r).transpose();
    const Matrix& z = sol.z_path[r];
    const Vector lhs = z * phi.eval(t, x);
    out.sup_residual = std::max(out.sup_residual, (lhs - rhs).lpNorm<Eigen::Infinity>());
    if (r == steps) {
      out.lhs = lhs;
      out.rhs = rhs;
      break;
    }
    Vector dt_term = lie_bracket_fd(drift, phi.eval, t, x, fd_h);
    dt_term += (phi.eval(t + fd_h, x) - phi.eval(std::max(0.0, t - fd_h), x)) /
               (t + fd_h - std::max(0.0, t - fd_h));
    for (int k = 0; k < d; ++k) {
      auto inner = [&, k](double tt, const Vector& y) { return lie_bracket_fd(sig(k), phi.eval, tt, y, fd_h); };
      const Vector first = inner(t, x);
      const Vector second = lie_bracket_fd(sig(k), inner, t, x, fd_h);
      dt_term += 0.5 * second;
      rhs += z * first * (path.values(r + 1, k) - path.values(r, k));
    }
    rhs += z * dt_term * h;
  }
  return out;
}

}  // namespace hypodens

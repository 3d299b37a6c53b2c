#pragma once

#include "hypodens/core.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hypodens {

// Indices are 0-based throughout: driving fields sigma_0 .. sigma_{d-1}.
//
// A model supplies the coefficients of
//
//   dX_t = sum_j sigma_j(t, X_t) o dW^j_t + b(t, X_t) dt      (Stratonovich)
//
// plus spatial/time derivatives. Derivative hooks default to central finite
// differences with step fd_step(); subclasses override them with closed forms.
class VectorFieldModel {
public:
  VectorFieldModel(int n, int d, std::string name = {})
      : n_(n), d_(d), name_(std::move(name)) {
    if (n <= 0 || d <= 0) throw ArgumentError("model dimensions must be positive");
  }
  virtual ~VectorFieldModel() = default;

  int n() const { return n_; }
  int d() const { return d_; }
  const std::string& name() const { return name_; }

  virtual void sigma(int j, double t, const Vector& x, Eigen::Ref<Vector> out) const = 0;
  virtual void drift(double t, const Vector& x, Eigen::Ref<Vector> out) const = 0;

  /// out(a, c) = d sigma_j^a / d x_c
  virtual void jac_sigma(int j, double t, const Vector& x, Eigen::Ref<Matrix> out) const {
    fd_jacobian([&](const Vector& y, Eigen::Ref<Vector> o) { sigma(j, t, y, o); }, x, out);
  }
  virtual void jac_drift(double t, const Vector& x, Eigen::Ref<Matrix> out) const {
    fd_jacobian([&](const Vector& y, Eigen::Ref<Vector> o) { drift(t, y, o); }, x, out);
  }
  /// out[a](b, c) = d^2 sigma_j^a / d x_b d x_c; out is resized to n matrices.
  virtual void hess_sigma(int j, double t, const Vector& x, std::vector<Matrix>& out) const {
    out.assign(n_, Matrix::Zero(n_, n_));
    Matrix jp(n_, n_), jm(n_, n_);
    Vector y = x;
    const double h = fd_step_;
    for (int c = 0; c < n_; ++c) {
      y[c] = x[c] + h;
      jac_sigma(j, t, y, jp);
      y[c] = x[c] - h;
      jac_sigma(j, t, y, jm);
      y[c] = x[c];
      for (int a = 0; a < n_; ++a) out[a].col(c) = (jp.row(a) - jm.row(a)).transpose() / (2 * h);
    }
    for (auto& m : out) m = 0.5 * (m + m.transpose()).eval();
  }
  virtual void dt_sigma(int j, double t, const Vector& x, Eigen::Ref<Vector> out) const {
    Vector p(n_), m(n_);
    sigma(j, t + fd_step_, x, p);
    sigma(j, t - fd_step_, x, m);
    out = (p - m) / (2 * fd_step_);
  }

  /// sig(:, k) = sigma_k(t, x) and ito = b + 1/2 sum_k (d sigma_k) sigma_k, the
  /// drift of the Ito form. `sig` and `ito` must already have the right shape.
  virtual void ito_terms(double t, const Vector& x, Matrix& sig, Vector& ito) const {
    drift(t, x, ito);
    Matrix jac(n_, n_);
    for (int k = 0; k < d_; ++k) {
      sigma(k, t, x, sig.col(k));
      jac_sigma(k, t, x, jac);
      ito.noalias() += 0.5 * jac * sig.col(k);
    }
  }

  double fd_step() const { return fd_step_; }
  void set_fd_step(double h) {
    if (!(h > 0)) throw ArgumentError("fd step must be positive");
    fd_step_ = h;
  }

  /// Growth constant for the linear-growth diagnostic, when known.
  std::optional<double> kappa;

  // Checked single evaluations; these throw EvaluationError on NaN/inf.
  Vector sigma_at(int j, double t, const Vector& x) const {
    Vector out(n_);
    sigma(j, t, x, out);
    if (!out.allFinite())
      throw EvaluationError("non-finite sigma_" + std::to_string(j) + " at t=" + std::to_string(t) +
                                " x=" + format_vector(x),
                            j, t, x);
    return out;
  }
  Vector drift_at(double t, const Vector& x) const {
    Vector out(n_);
    drift(t, x, out);
    if (!out.allFinite())
      throw EvaluationError("non-finite drift at t=" + std::to_string(t) + " x=" + format_vector(x),
                            -1, t, x);
    return out;
  }
  Matrix jac_sigma_at(int j, double t, const Vector& x) const {
    Matrix out(n_, n_);
    jac_sigma(j, t, x, out);
    if (!out.allFinite())
      throw EvaluationError("non-finite Jacobian of sigma_" + std::to_string(j), j, t, x);
    return out;
  }
  Matrix jac_drift_at(double t, const Vector& x) const {
    Matrix out(n_, n_);
    jac_drift(t, x, out);
    if (!out.allFinite()) throw EvaluationError("non-finite Jacobian of drift", -1, t, x);
    return out;
  }

  /// Central-difference Jacobian of an R^n -> R^n map with this model's step.
  template <class F>
  void fd_jacobian(F&& f, const Vector& x, Eigen::Ref<Matrix> out) const {
    Vector y = x, p(n_), m(n_);
    for (int c = 0; c < n_; ++c) {
      y[c] = x[c] + fd_step_;
      f(y, p);
      y[c] = x[c] - fd_step_;
      f(y, m);
      y[c] = x[c];
      out.col(c) = (p - m) / (2 * fd_step_);
    }
  }

private:
  int n_;
  int d_;
  std::string name_;
  double fd_step_ = 1e-5;
};

using ModelPtr = std::shared_ptr<const VectorFieldModel>;

// ---------------------------------------------------------------------------
// Polynomial coefficients with exact derivatives.

struct Monomial {
  double coef = 0.0;
  int t_power = 0;
  std::vector<std::pair<int, int>> x_powers;  // (variable, exponent), exponent >= 1

  friend bool operator==(const Monomial&, const Monomial&) = default;
};

using PolyComponent = std::vector<Monomial>;
using PolyField = std::vector<PolyComponent>;  // one component per state coordinate

namespace detail {

inline double ipow(double v, int e) {
  double r = 1.0;
  for (int k = 0; k < e; ++k) r *= v;
  return r;
}

inline double eval_monomial(const Monomial& mo, double t, const Vector& x) {
  double v = mo.coef * ipow(t, mo.t_power);
  for (const auto& [var, e] : mo.x_powers) v *= ipow(x[var], e);
  return v;
}

// d/dx_var of a monomial.
inline double eval_monomial_dx(const Monomial& mo, int var, double t, const Vector& x) {
  double v = mo.coef * ipow(t, mo.t_power);
  bool found = false;
  for (const auto& [w, e] : mo.x_powers) {
    if (w == var) {
      found = true;
      v *= e * ipow(x[w], e - 1);
    } else {
      v *= ipow(x[w], e);
    }
  }
  return found ? v : 0.0;
}

inline double eval_monomial_dxx(const Monomial& mo, int v1, int v2, double t, const Vector& x) {
  double v = mo.coef * ipow(t, mo.t_power);
  int hits = 0;
  for (const auto& [w, e] : mo.x_powers) {
    int k = (w == v1) + (w == v2);
    if (k > e) return 0.0;
    hits += k;
    double f = 1.0;
    for (int q = 0; q < k; ++q) f *= (e - q);
    v *= f * ipow(x[w], e - k);
  }
  return hits == 2 ? v : 0.0;
}

inline double eval_monomial_dt(const Monomial& mo, double t, const Vector& x) {
  if (mo.t_power == 0) return 0.0;
  double v = mo.coef * mo.t_power * ipow(t, mo.t_power - 1);
  for (const auto& [var, e] : mo.x_powers) v *= ipow(x[var], e);
  return v;
}

}  // namespace detail

class PolynomialModel final : public VectorFieldModel {
public:
  PolynomialModel(int n, int d, std::vector<PolyField> sigma, PolyField drift, std::string name = {})
      : VectorFieldModel(n, d, std::move(name)), sigma_(std::move(sigma)), drift_(std::move(drift)) {
    if (static_cast<int>(sigma_.size()) != d)
      throw ArgumentError("polynomial model needs exactly d diffusion fields");
    if (drift_.empty()) drift_.assign(n, {});
    auto check = [n](const PolyField& f) {
      if (static_cast<int>(f.size()) != n)
        throw ArgumentError("polynomial field must have n components");
      for (const auto& comp : f)
        for (const auto& mo : comp) {
          if (mo.t_power < 0) throw ArgumentError("negative time exponent");
          for (const auto& [v, e] : mo.x_powers)
            if (v < 0 || v >= n || e < 1) throw ArgumentError("bad monomial exponent entry");
        }
    };
    for (const auto& f : sigma_) check(f);
    check(drift_);
    for (int k = -1; k < d; ++k) {
      const PolyField& f = k < 0 ? drift_ : sigma_[k];
      for (int a = 0; a < n; ++a)
        for (const auto& mo : f[a]) {
          FlatTerm ft{k, a, mo.coef, mo.t_power, vars_.size(), 0};
          for (const auto& ve : mo.x_powers) vars_.push_back(ve);
          ft.end = vars_.size();
          flat_.push_back(ft);
        }
    }
  }

  const std::vector<PolyField>& sigma_fields() const { return sigma_; }
  const PolyField& drift_field() const { return drift_; }

  void sigma(int j, double t, const Vector& x, Eigen::Ref<Vector> out) const override {
    eval(sigma_[j], t, x, out);
  }
  void drift(double t, const Vector& x, Eigen::Ref<Vector> out) const override {
    eval(drift_, t, x, out);
  }
  void jac_sigma(int j, double t, const Vector& x, Eigen::Ref<Matrix> out) const override {
    jac(sigma_[j], t, x, out);
  }
  void jac_drift(double t, const Vector& x, Eigen::Ref<Matrix> out) const override {
    jac(drift_, t, x, out);
  }
  void hess_sigma(int j, double t, const Vector& x, std::vector<Matrix>& out) const override {
    const int nn = n();
    if (static_cast<int>(out.size()) != nn) out.assign(nn, Matrix::Zero(nn, nn));
    for (auto& m : out) {
      m.resize(nn, nn);
      m.setZero();
    }
    for (int a = 0; a < nn; ++a)
      for (const auto& mo : sigma_[j][a])
        for (int b = 0; b < nn; ++b)
          for (int c = b; c < nn; ++c) {
            double v = detail::eval_monomial_dxx(mo, b, c, t, x);
            out[a](b, c) += v;
            if (c != b) out[a](c, b) += v;
          }
  }
  void dt_sigma(int j, double t, const Vector& x, Eigen::Ref<Vector> out) const override {
    for (int a = 0; a < n(); ++a) {
      double s = 0.0;
      for (const auto& mo : sigma_[j][a]) s += detail::eval_monomial_dt(mo, t, x);
      out[a] = s;
    }
  }

  void ito_terms(double t, const Vector& x, Matrix& sig, Vector& ito) const override {
    const double* xp = x.data();
    double* sp = sig.data();
    double* ip = ito.data();
    const int nn = n();
    std::fill(sp, sp + sig.size(), 0.0);
    std::fill(ip, ip + nn, 0.0);
    for (const auto& ft : flat_) {
      double v = ft.coef * detail::ipow(t, ft.t_power);
      for (std::size_t q = ft.begin; q < ft.end; ++q) v *= detail::ipow(xp[vars_[q].first], vars_[q].second);
      if (ft.field < 0)
        ip[ft.comp] += v;
      else
        sp[ft.field * nn + ft.comp] += v;
    }
    for (const auto& ft : flat_) {
      if (ft.field < 0) continue;
      const double base = ft.coef * detail::ipow(t, ft.t_power);
      for (std::size_t q = ft.begin; q < ft.end; ++q) {
        const auto [c, e] = vars_[q];
        const double sc = sp[ft.field * nn + c];
        if (sc == 0.0) continue;
        double dv = base * e * detail::ipow(xp[c], e - 1);
        for (std::size_t r = ft.begin; r < ft.end; ++r)
          if (r != q) dv *= detail::ipow(xp[vars_[r].first], vars_[r].second);
        ip[ft.comp] += 0.5 * dv * sc;
      }
    }
  }

private:
  struct FlatTerm {
    int field;  // -1 for the drift
    int comp;
    double coef;
    int t_power;
    std::size_t begin, end;  // range in vars_
  };

  static void eval(const PolyField& f, double t, const Vector& x, Eigen::Ref<Vector> out) {
    for (std::size_t a = 0; a < f.size(); ++a) {
      double s = 0.0;
      for (const auto& mo : f[a]) s += detail::eval_monomial(mo, t, x);
      out[a] = s;
    }
  }
  void jac(const PolyField& f, double t, const Vector& x, Eigen::Ref<Matrix> out) const {
    out.setZero();
    for (int a = 0; a < n(); ++a)
      for (const auto& mo : f[a])
        for (const auto& [v, e] : mo.x_powers) out(a, v) += detail::eval_monomial_dx(mo, v, t, x);
  }

  std::vector<PolyField> sigma_;
  PolyField drift_;
  std::vector<FlatTerm> flat_;
  std::vector<std::pair<int, int>> vars_;
};

// ---------------------------------------------------------------------------
// Model from plain callbacks. Absent derivative callbacks fall back to
// central finite differences.

class CallbackModel final : public VectorFieldModel {
public:
  using FieldFn = std::function<Vector(int, double, const Vector&)>;
  using DriftFn = std::function<Vector(double, const Vector&)>;
  using JacFn = std::function<Matrix(int, double, const Vector&)>;
  using DriftJacFn = std::function<Matrix(double, const Vector&)>;

  CallbackModel(int n, int d, FieldFn sigma, DriftFn drift, std::string name = {})
      : VectorFieldModel(n, d, std::move(name)), sigma_(std::move(sigma)), drift_(std::move(drift)) {}

  JacFn jac_sigma_fn;
  DriftJacFn jac_drift_fn;

  void sigma(int j, double t, const Vector& x, Eigen::Ref<Vector> out) const override {
    out = sigma_(j, t, x);
  }
  void drift(double t, const Vector& x, Eigen::Ref<Vector> out) const override {
    if (drift_)
      out = drift_(t, x);
    else
      out.setZero();
  }
  void jac_sigma(int j, double t, const Vector& x, Eigen::Ref<Matrix> out) const override {
    if (jac_sigma_fn)
      out = jac_sigma_fn(j, t, x);
    else
      VectorFieldModel::jac_sigma(j, t, x, out);
  }
  void jac_drift(double t, const Vector& x, Eigen::Ref<Matrix> out) const override {
    if (jac_drift_fn)
      out = jac_drift_fn(t, x);
    else
      VectorFieldModel::jac_drift(t, x, out);
  }

private:
  FieldFn sigma_;
  DriftFn drift_;
};

// ---------------------------------------------------------------------------
// Built-in models.

namespace builtin {

inline Monomial mono(double c, std::vector<std::pair<int, int>> xp = {}, int tp = 0) {
  Monomial m;
  m.coef = c;
  m.t_power = tp;
  m.x_powers = std::move(xp);
  return m;
}

/// sigma_1 = (1, 0, -x2/2), sigma_2 = (0, 1, x1/2), optional constant drift.
inline std::shared_ptr<PolynomialModel> heisenberg(const Vector& drift = Vector::Zero(3),
                                                   std::string name = "heisenberg") {
  std::vector<PolyField> s(2, PolyField(3));
  s[0][0] = {mono(1.0)};
  s[0][2] = {mono(-0.5, {{1, 1}})};
  s[1][1] = {mono(1.0)};
  s[1][2] = {mono(0.5, {{0, 1}})};
  PolyField b(3);
  for (int a = 0; a < 3; ++a)
    if (drift[a] != 0.0) b[a] = {mono(drift[a])};
  auto m = std::make_shared<PolynomialModel>(3, 2, std::move(s), std::move(b), std::move(name));
  m->kappa = 1.0 + drift.norm();
  return m;
}

/// Heisenberg fields multiplied by (1 + t/2).
inline std::shared_ptr<PolynomialModel> heisenberg_t() {
  std::vector<PolyField> s(2, PolyField(3));
  s[0][0] = {mono(1.0), mono(0.5, {}, 1)};
  s[0][2] = {mono(-0.5, {{1, 1}}), mono(-0.25, {{1, 1}}, 1)};
  s[1][1] = {mono(1.0), mono(0.5, {}, 1)};
  s[1][2] = {mono(0.5, {{0, 1}}), mono(0.25, {{0, 1}}, 1)};
  auto m = std::make_shared<PolynomialModel>(3, 2, std::move(s), PolyField(3), "heisenberg-t");
  m->kappa = 1.5;
  return m;
}

/// sigma_1 = (1, 0), sigma_2 = (0, x1).
inline std::shared_ptr<PolynomialModel> grushin() {
  std::vector<PolyField> s(2, PolyField(2));
  s[0][0] = {mono(1.0)};
  s[1][1] = {mono(1.0, {{0, 1}})};
  auto m = std::make_shared<PolynomialModel>(2, 2, std::move(s), PolyField(2), "grushin");
  m->kappa = 1.0;
  return m;
}

/// sigma_j = e_j, b = 0, n = d.
inline std::shared_ptr<PolynomialModel> elliptic(int n = 2) {
  std::vector<PolyField> s(n, PolyField(n));
  for (int j = 0; j < n; ++j) s[j][j] = {mono(1.0)};
  auto m = std::make_shared<PolynomialModel>(n, n, std::move(s), PolyField(n), "elliptic");
  m->kappa = n;
  return m;
}

inline std::vector<std::string> names() {
  return {"heisenberg", "grushin", "heisenberg-t", "elliptic", "heisenberg-drift"};
}

/// Returns nullptr for unknown names.
inline ModelPtr by_name(const std::string& name) {
  if (name == "heisenberg") return heisenberg();
  if (name == "grushin") return grushin();
  if (name == "heisenberg-t") return heisenberg_t();
  if (name == "elliptic") return elliptic(2);
  if (name == "heisenberg-drift") {
    Vector b = Vector::Zero(3);
    b[0] = 1.0;
    return heisenberg(b, "heisenberg-drift");
  }
  return nullptr;
}

}  // namespace builtin

}  // namespace hypodens

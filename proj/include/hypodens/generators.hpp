#pragma once

// Random polynomial models and random quadratic maps for property checks.

#include "hypodens/decomp.hpp"
#include "hypodens/model.hpp"
#include "hypodens/rng.hpp"

#include <memory>

namespace hypodens::gen {

/// Every sigma and drift component gets N(0,1) constant and linear
/// coefficients and, for degree >= 2, N(0, 1/4) quadratic ones.
inline std::shared_ptr<PolynomialModel> random_polynomial_model(NormalStream& g, int n, int d, int degree = 1) {
  auto comp = [&] {
    PolyComponent c{builtin::mono(g())};
    if (degree >= 1)
      for (int v = 0; v < n; ++v) c.push_back(builtin::mono(g(), {{v, 1}}));
    if (degree >= 2)
      for (int v = 0; v < n; ++v)
        for (int w = v; w < n; ++w) {
          if (v == w)
            c.push_back(builtin::mono(0.5 * g(), {{v, 2}}));
          else
            c.push_back(builtin::mono(0.5 * g(), {{v, 1}, {w, 1}}));
        }
    return c;
  };
  std::vector<PolyField> s(d, PolyField(n));
  for (auto& f : s)
    for (auto& c : f) c = comp();
  PolyField b(n);
  for (auto& c : b) c = comp();
  return std::make_shared<PolynomialModel>(n, d, std::move(s), std::move(b), "random");
}

/// Quadratic map R^m -> R^m with |L| = lin_norm (spectral) and Hessian entries N(0, scale^2).
inline EtaMap random_eta(NormalStream& g, int m, double scale, double lin_norm) {
  EtaMap e = EtaMap::zero(m, m);
  for (int j = 0; j < m; ++j) {
    for (int a = 0; a < m; ++a)
      for (int b = a; b < m; ++b) {
        const double v = scale * g();
        e.hess[j](a, b) = v;
        e.hess[j](b, a) = v;
      }
  }
  if (lin_norm > 0) {
    Matrix l(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) l(i, j) = g();
    const double top = Eigen::JacobiSVD<Matrix>(l).singularValues()[0];
    e.linear = l * (lin_norm / top);
  }
  return e;
}

inline Vector random_vector(NormalStream& g, int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = g();
  return v;
}

}  // namespace hypodens::gen

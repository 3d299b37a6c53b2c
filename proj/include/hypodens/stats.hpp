#pragma once

#include "hypodens/core.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace hypodens {

/// Neumaier compensated sum.
class CompensatedSum {
public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double mean(std::span<const double> v) {
  CompensatedSum s;
  for (double x : v) s.add(x);
  return v.empty() ? 0.0 : s.value() / static_cast<double>(v.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  CompensatedSum s;
  for (double x : v) s.add((x - m) * (x - m));
  return s.value() / static_cast<double>(v.size() - 1);
}

inline double rms(std::span<const double> v) {
  CompensatedSum s;
  for (double x : v) s.add(x * x);
  return v.empty() ? 0.0 : std::sqrt(s.value() / static_cast<double>(v.size()));
}

/// Linear-interpolation quantile (Hyndman-Fan type 7).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return v[lo] * (1 - w) + v[hi] * w;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double ci_lo = 0.0;  // 95% t-interval on the slope
  double ci_hi = 0.0;
  std::size_t points = 0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("fit_line needs >= 2 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = mean(x), my = mean(y);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0) throw ArgumentError("fit_line: degenerate abscissae");
  LinearFit f;
  f.points = x.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - f.intercept - f.slope * x[i];
      sse += r * r;
    }
    f.slope_se = std::sqrt(sse / (n - 2) / sxx);
    boost::math::students_t dist(n - 2);
    const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
    f.ci_lo = f.slope - tq * f.slope_se;
    f.ci_hi = f.slope + tq * f.slope_se;
  } else {
    f.ci_lo = f.ci_hi = f.slope;
  }
  return f;
}

/// Fits log y against log x.
inline LinearFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return fit_line(lx, ly);
}

struct Proportion {
  std::size_t hits = 0;
  std::size_t n = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0;  // Wilson score interval, 95%
  double ci_hi = 0.0;
};

inline Proportion wilson(std::size_t hits, std::size_t n, double z = 1.959963984540054) {
  Proportion p;
  p.hits = hits;
  p.n = n;
  if (n == 0) return p;
  const double nn = static_cast<double>(n);
  p.p_hat = static_cast<double>(hits) / nn;
  const double den = 1 + z * z / nn;
  const double centre = (p.p_hat + z * z / (2 * nn)) / den;
  const double half = z * std::sqrt(p.p_hat * (1 - p.p_hat) / nn + z * z / (4 * nn * nn)) / den;
  p.ci_lo = hits == 0 ? 0.0 : std::max(0.0, centre - half);
  p.ci_hi = hits == n ? 1.0 : std::min(1.0, centre + half);
  return p;
}

/// Smallest and largest eigenvalue of a symmetric matrix.
inline std::pair<double, double> eigen_extremes(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  const Vector& ev = es.eigenvalues();
  return {ev[0], ev[ev.size() - 1]};
}

}  // namespace hypodens

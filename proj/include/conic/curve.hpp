#pragma once

// Cubic-spline interpolation utilities for sampled planar curves. Segments
// produced by the integrators are dense sample tables; splines give smooth
// evaluation, derivatives and arc-length reparametrization on top of them.

#include "conic/common.hpp"

#include <algorithm>
#include <vector>

namespace conic {

// Natural cubic spline through (t_i, y_i), t strictly increasing.
class CubicSpline1d {
 public:
  CubicSpline1d() = default;

  CubicSpline1d(std::vector<double> t, std::vector<double> y)
      : t_(std::move(t)), y_(std::move(y)) {
    const size_t n = t_.size();
    if (n != y_.size() || n == 0)
      throw ValidationError("spline: mismatched or empty sample arrays");
    for (size_t i = 1; i < n; ++i)
      if (!(t_[i] > t_[i - 1]))
        throw ValidationError("spline: knots must be strictly increasing");
    m_.assign(n, 0.0);
    if (n < 3) return;  // linear (or constant) fallback, m stays zero
    // Thomas algorithm for the natural-spline tridiagonal system.
    std::vector<double> c(n, 0.0), d(n, 0.0);
    for (size_t i = 1; i + 1 < n; ++i) {
      const double h0 = t_[i] - t_[i - 1];
      const double h1 = t_[i + 1] - t_[i];
      const double rhs =
          6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
      const double diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
      c[i] = h1 / diag;
      d[i] = (rhs - h0 * d[i - 1]) / diag;
    }
    for (size_t i = n - 2; i >= 1; --i) m_[i] = d[i] - c[i] * m_[i + 1];
  }

  double t_min() const { return t_.front(); }
  double t_max() const { return t_.back(); }

  double eval(double t) const {
    if (t_.size() == 1) return y_[0];
    const size_t i = locate(t);
    const double h = t_[i + 1] - t_[i];
    const double a = (t_[i + 1] - t) / h;
    const double b = (t - t_[i]) / h;
    return a * y_[i] + b * y_[i + 1] +
           ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h /
               6.0;
  }

  double deriv(double t) const {
    if (t_.size() == 1) return 0.0;
    const size_t i = locate(t);
    const double h = t_[i + 1] - t_[i];
    const double a = (t_[i + 1] - t) / h;
    const double b = (t - t_[i]) / h;
    return (y_[i + 1] - y_[i]) / h +
           ((3.0 * b * b - 1.0) * m_[i + 1] - (3.0 * a * a - 1.0) * m_[i]) *
               h / 6.0;
  }

  double second_deriv(double t) const {
    if (t_.size() == 1) return 0.0;
    const size_t i = locate(t);
    const double h = t_[i + 1] - t_[i];
    const double a = (t_[i + 1] - t) / h;
    const double b = (t - t_[i]) / h;
    return a * m_[i] + b * m_[i + 1];
  }

 private:
  size_t locate(double t) const {
    auto it = std::upper_bound(t_.begin(), t_.end(), t);
    size_t i = static_cast<size_t>(it - t_.begin());
    if (i == 0) return 0;
    if (i >= t_.size()) return t_.size() - 2;
    return i - 1;
  }

  std::vector<double> t_, y_;
  std::vector<double> m_;  // second derivatives at knots
};

// Planar curve t -> (u1, u2) interpolating a sample table.
class PlanarCurve {
 public:
  PlanarCurve() = default;

  PlanarCurve(const std::vector<double>& t, const std::vector<ControlPoint>& p) {
    std::vector<double> x(p.size()), y(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
      x[i] = p[i].u1;
      y[i] = p[i].u2;
    }
    x_ = CubicSpline1d(t, std::move(x));
    y_ = CubicSpline1d(t, std::move(y));
    single_ = p.size() == 1;
    if (single_) only_ = p[0];
  }

  ControlPoint eval(double t) const {
    if (single_) return only_;
    return {x_.eval(t), y_.eval(t)};
  }

  Eigen::Vector2d deriv(double t) const {
    if (single_) return Eigen::Vector2d::Zero();
    return {x_.deriv(t), y_.deriv(t)};
  }

  Eigen::Vector2d second_deriv(double t) const {
    if (single_) return Eigen::Vector2d::Zero();
    return {x_.second_deriv(t), y_.second_deriv(t)};
  }

  double t_min() const { return single_ ? 0.0 : x_.t_min(); }
  double t_max() const { return single_ ? 0.0 : x_.t_max(); }

  // Arc length of the interpolated curve, composite Simpson on `n` panels.
  double arc_length(int n = 512) const {
    if (single_) return 0.0;
    const double a = t_min(), b = t_max();
    if (n % 2) ++n;
    const double h = (b - a) / n;
    double s = deriv(a).norm() + deriv(b).norm();
    for (int i = 1; i < n; ++i)
      s += deriv(a + i * h).norm() * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
  }

 private:
  CubicSpline1d x_, y_;
  bool single_ = false;
  ControlPoint only_;
};

// Quartic polynomial arc P(s), s in [0,1], fixed by position and first
// derivative at s=0 plus position, first and second derivative at s=1.
// Used to splice analytic replacements for non-mixing arcs.
class QuarticArc {
 public:
  QuarticArc(const Eigen::Vector2d& p0, const Eigen::Vector2d& d0,
             const Eigen::Vector2d& p1, const Eigen::Vector2d& d1,
             const Eigen::Vector2d& dd1) {
    // P(s) = c0 + c1 s + c2 s^2 + c3 s^3 + c4 s^4
    c_[0] = p0;
    c_[1] = d0;
    // Remaining from conditions at s=1:
    //   c2 + c3 + c4     = p1 - c0 - c1
    //   2c2 + 3c3 + 4c4  = d1 - c1
    //   2c2 + 6c3 + 12c4 = dd1
    Eigen::Matrix3d a;
    a << 1, 1, 1, 2, 3, 4, 2, 6, 12;
    const Eigen::Matrix3d ai = a.inverse();
    for (int k = 0; k < 2; ++k) {
      Eigen::Vector3d rhs(p1[k] - c_[0][k] - c_[1][k], d1[k] - c_[1][k],
                          dd1[k]);
      Eigen::Vector3d sol = ai * rhs;
      c_[2][k] = sol[0];
      c_[3][k] = sol[1];
      c_[4][k] = sol[2];
    }
  }

  Eigen::Vector2d eval(double s) const {
    return c_[0] + s * (c_[1] + s * (c_[2] + s * (c_[3] + s * c_[4])));
  }

  Eigen::Vector2d deriv(double s) const {
    return c_[1] + s * (2.0 * c_[2] + s * (3.0 * c_[3] + s * 4.0 * c_[4]));
  }

 private:
  std::array<Eigen::Vector2d, 5> c_;
};

}  // namespace conic

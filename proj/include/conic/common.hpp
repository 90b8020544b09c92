#pragma once

// Shared geometry, error taxonomy and small numeric helpers used across the
// library. Everything operates on plain doubles and Eigen dense types.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace conic {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

// Base class for all recoverable domain errors; the CLI maps these to exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// control space
// ---------------------------------------------------------------------------

struct ControlPoint {
  double u1 = 0.0;
  double u2 = 0.0;

  Eigen::Vector2d vec() const { return {u1, u2}; }
  static ControlPoint from(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }

  bool finite() const { return std::isfinite(u1) && std::isfinite(u2); }
};

inline double distance(const ControlPoint& a, const ControlPoint& b) {
  return std::hypot(a.u1 - b.u1, a.u2 - b.u2);
}

// Axis-aligned rectangle or disc in control space.
struct Region {
  enum class Kind { Rect, Disc };

  Kind kind = Kind::Rect;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // rect corners, x0<=x1, y0<=y1
  ControlPoint center;                     // disc
  double radius = 0;                       // disc

  static Region rect(double x0, double y0, double x1, double y1) {
    Region r;
    r.kind = Kind::Rect;
    r.x0 = std::min(x0, x1);
    r.x1 = std::max(x0, x1);
    r.y0 = std::min(y0, y1);
    r.y1 = std::max(y0, y1);
    return r;
  }

  static Region disc(ControlPoint c, double radius) {
    Region r;
    r.kind = Kind::Disc;
    r.center = c;
    r.radius = radius;
    return r;
  }

  bool contains(const ControlPoint& p) const {
    if (kind == Kind::Rect)
      return p.u1 >= x0 && p.u1 <= x1 && p.u2 >= y0 && p.u2 <= y1;
    return distance(p, center) <= radius;
  }

  // Euclidean distance from p to the region (0 inside).
  double distance_to(const ControlPoint& p) const {
    if (kind == Kind::Disc) return std::max(0.0, distance(p, center) - radius);
    const double dx = std::max({x0 - p.u1, 0.0, p.u1 - x1});
    const double dy = std::max({y0 - p.u2, 0.0, p.u2 - y1});
    return std::hypot(dx, dy);
  }

  double diameter() const {
    if (kind == Kind::Disc) return 2.0 * radius;
    return std::hypot(x1 - x0, y1 - y0);
  }

  // Bounding box as (x0, y0, x1, y1).
  std::array<double, 4> bbox() const {
    if (kind == Kind::Rect) return {x0, y0, x1, y1};
    return {center.u1 - radius, center.u2 - radius, center.u1 + radius,
            center.u2 + radius};
  }
};

// ---------------------------------------------------------------------------
// numeric helpers
// ---------------------------------------------------------------------------

// Spectral norm of a real symmetric matrix (largest |eigenvalue|).
inline double symmetric_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a,
                                                    Eigen::EigenvaluesOnly);
  const auto& v = es.eigenvalues();
  return std::max(std::abs(v(0)), std::abs(v(v.size() - 1)));
}

inline bool is_symmetric(const Eigen::MatrixXd& a, double rel_tol) {
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Random symmetric matrix with spectral norm exactly `norm` (norm > 0),
// entries from a seeded Gaussian ensemble. Deterministic given the engine
// state.
inline Eigen::MatrixXd random_symmetric(int dim, double norm,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = i; j < dim; ++j) {
      const double x = gauss(rng);
      a(i, j) = x;
      a(j, i) = x;
    }
  const double s = symmetric_norm(a);
  if (s == 0.0) return Eigen::MatrixXd::Zero(dim, dim);
  return a * (norm / s);
}

// Wrap an angle into [0, 2*pi).
inline double wrap_angle(double a) {
  const double two_pi = 2.0 * M_PI;
  double r = std::fmod(a, two_pi);
  if (r < 0) r += two_pi;
  if (r >= two_pi) r -= two_pi;
  return r;
}

}  // namespace conic

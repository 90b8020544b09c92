#pragma once

// The non-mixing vector field X_P and its integral curves: descent into a
// conical singularity with a Cartesian-to-polar handoff, direction-prescribed
// exit curves, and one-sided 2-jet extraction at the singularity.

#include "conic/conical.hpp"
#include "conic/curve.hpp"

#include <functional>
#include <optional>

namespace conic {

class Degenerate : public Error {
 public:
  Degenerate(const std::string& msg, double gap) : Error(msg), gap(gap) {}
  double gap;
};

struct NonMixingField {
  OperatorTriple model;
  BandRange pair;   // (j, j+1)
  Region region;    // certified F > 0 working region
  double degeneracy_tol_rel = 1e-10;  // of max(||H||, ||H1||+||H2||)
};

inline NonMixingField make_field(OperatorTriple model, BandRange pair,
                                 Region region) {
  if (pair.hi != pair.lo + 1)
    throw ValidationError("make_field: band pair must be (j, j+1)");
  return NonMixingField{std::move(model), pair, region};
}

struct FieldSample {
  Eigen::Vector2d value;      // X_P(u), descent sign applied
  double descent_rate = 0.0;  // F(u): d(gap)/dt along the field is -F
  double gap = 0.0;
};

// Pointwise field evaluation. The descent-sign choice makes the result
// independent of the eigenvector sign gauge, so no cross-call state is
// needed; curves integrated concurrently cannot interfere.
inline FieldSample field_eval(const NonMixingField& f, const ControlPoint& u) {
  const EigenSystem es = eigensystem(f.model, u);
  const double tol = f.degeneracy_tol_rel * degeneracy_scale(f.model, es);
  if (es.gap(f.pair.lo) <= tol) {
    std::ostringstream os;
    os << "field_eval: gap " << es.gap(f.pair.lo) << " at (" << u.u1 << ", "
       << u.u2 << ") is too close to the singularity";
    throw Degenerate(os.str(), es.gap(f.pair.lo));
  }
  const auto raw = detail::raw_descent_field(f.model, f.pair, es);
  return {raw.direction, raw.descent_rate, raw.gap};
}

// ---------------------------------------------------------------------------
// curve segments
// ---------------------------------------------------------------------------

enum class SegmentKind { Connector, Incoming, Outgoing };

inline const char* to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::Connector: return "connector";
    case SegmentKind::Incoming: return "incoming";
    default: return "outgoing";
  }
}

struct VertexEnd {
  ControlPoint point;  // the intersection
  int lower = 0;       // index j of the pair
  double alpha = 0.0;  // alpha_minus for incoming ends, alpha_plus for
                       // outgoing starts
};

class CurveSegment {
 public:
  CurveSegment() = default;

  CurveSegment(SegmentKind kind, std::vector<double> params,
               std::vector<ControlPoint> points,
               std::optional<VertexEnd> end_data = std::nullopt)
      : kind_(kind),
        params_(std::move(params)),
        points_(std::move(points)),
        end_data_(std::move(end_data)) {
    if (params_.size() != points_.size() || params_.empty())
      throw ValidationError("segment: bad sample arrays");
    for (size_t i = 1; i < params_.size(); ++i)
      if (!(params_[i] > params_[i - 1]))
        throw ValidationError("segment: parameters must strictly increase");
    curve_ = PlanarCurve(params_, points_);
  }

  SegmentKind kind() const { return kind_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<ControlPoint>& points() const { return points_; }
  const std::optional<VertexEnd>& end_data() const { return end_data_; }
  const PlanarCurve& curve() const { return curve_; }

  double param_begin() const { return params_.front(); }
  double param_end() const { return params_.back(); }
  ControlPoint front() const { return points_.front(); }
  ControlPoint back() const { return points_.back(); }
  size_t size() const { return points_.size(); }
  bool zero_length() const { return points_.size() == 1; }

  double arc_length() const { return curve_.arc_length(); }

  CurveSegment resampled(int n) const {
    if (zero_length() || n < 2) return *this;
    std::vector<double> t(static_cast<size_t>(n));
    std::vector<ControlPoint> p(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      t[static_cast<size_t>(i)] =
          param_begin() + (param_end() - param_begin()) * i / (n - 1.0);
      p[static_cast<size_t>(i)] = curve_.eval(t[static_cast<size_t>(i)]);
    }
    // keep the recorded endpoints bit-exact
    p.front() = points_.front();
    p.back() = points_.back();
    return CurveSegment(kind_, std::move(t), std::move(p), end_data_);
  }

 private:
  SegmentKind kind_ = SegmentKind::Connector;
  std::vector<double> params_;
  std::vector<ControlPoint> points_;
  std::optional<VertexEnd> end_data_;
  PlanarCurve curve_;
};

inline nlohmann::json segment_to_json(const CurveSegment& s,
                                      int sample_density = 10000) {
  const CurveSegment out =
      static_cast<int>(s.size()) > sample_density ? s.resampled(sample_density)
                                                  : s;
  nlohmann::json j;
  j["kind"] = to_string(out.kind());
  nlohmann::json samples = nlohmann::json::array();
  for (size_t i = 0; i < out.size(); ++i)
    samples.push_back(
        {out.params()[i], out.points()[i].u1, out.points()[i].u2});
  j["samples"] = samples;
  if (out.end_data()) {
    j["vertex"] = {{"u1", out.end_data()->point.u1},
                   {"u2", out.end_data()->point.u2},
                   {"lower", out.end_data()->lower},
                   {"alpha", out.end_data()->alpha}};
  }
  return j;
}

inline CurveSegment segment_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  SegmentKind k = kind == "connector" ? SegmentKind::Connector
                  : kind == "incoming" ? SegmentKind::Incoming
                                       : SegmentKind::Outgoing;
  std::vector<double> params;
  std::vector<ControlPoint> points;
  for (const auto& s : j.at("samples")) {
    params.push_back(s.at(0).get<double>());
    points.push_back({s.at(1).get<double>(), s.at(2).get<double>()});
  }
  std::optional<VertexEnd> end;
  if (j.contains("vertex")) {
    const auto& v = j["vertex"];
    end = VertexEnd{{v.at("u1").get<double>(), v.at("u2").get<double>()},
                    v.at("lower").get<int>(),
                    v.at("alpha").get<double>()};
  }
  return CurveSegment(k, std::move(params), std::move(points), std::move(end));
}

// ---------------------------------------------------------------------------
// adaptive Dormand-Prince 5(4) step for planar fields
// ---------------------------------------------------------------------------

namespace detail {

struct Dopri5Result {
  Eigen::Vector2d y;
  double error  = 0.0;
};

template <typename Rhs>
inline Dopri5Result dopri5_step(const Rhs& f, double t,
                                const Eigen::Vector2d& y, double h) {
  using V = Eigen::Vector2d;
  const V k1 = f(t, y);
  const V k2 = f(t + h / 5.0, y + h * (k1 / 5.0));
  const V k3 = f(t + 3.0 * h / 10.0, y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
  const V k4 = f(t + 4.0 * h / 5.0,
                 y + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3));
  const V k5 =
      f(t + 8.0 * h / 9.0,
        y + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2 +
                 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4));
  const V k6 = f(t + h, y + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 +
                                 46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4 -
                                 5103.0 / 18656.0 * k5));
  const V y5 = y + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 +
                        125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5 +
                        11.0 / 84.0 * k6);
  const V k7 = f(t + h, y5);
  const V y4 = y + h * (5179.0 / 57600.0 * k1 + 7571.0 / 16695.0 * k3 +
                        393.0 / 640.0 * k4 - 92097.0 / 339200.0 * k5 +
                        187.0 / 2100.0 * k6 + 1.0 / 40.0 * k7);
  return {y5, (y5 - y4).norm()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// integral curves
// ---------------------------------------------------------------------------

struct TraceOptions {
  double abs_tol = 1e-10;            // RK error tolerance on u per step
  int max_steps = 200000;
  double switch_radius_rel = 1e-3;   // polar handoff radius / region diameter
  // Polar RHS regularization radius, relative to the handoff radius. Balances
  // the O(rho) truncation of evaluating the slope at rho_floor instead of 0
  // against the eigenvector noise, which grows like 1/rho^2 near the
  // degeneracy.
  double rho_floor_rel = 1e-2;
  int polar_steps = 512;             // RK4 steps across the polar window
  LocateOptions locate;
};

struct IncomingTrace {
  CurveSegment segment;  // kind Incoming, ends exactly at the intersection
  Intersection intersection;
  double alpha_minus = 0.0;
};

namespace detail {

// Polar components of X_P around a known singularity. Both the angular slope
// d(theta)/d(rho) and |rho_dot| are quotients of band matrix elements, so the
// eigenvector sign gauge cancels and no continuation state is required.
struct PolarRhs {
  const OperatorTriple* model;
  BandRange pair;
  ControlPoint center;
  double rho_floor;

  struct Value {
    double dtheta_drho;
    double abs_rho_dot;
  };

  Value operator()(double rho, double theta) const {
    const double r = std::max(rho, rho_floor);
    const ControlPoint u{center.u1 + r * std::cos(theta),
                         center.u2 + r * std::sin(theta)};
    const EigenSystem es = eigensystem(*model, u);
    const Eigen::VectorXd& pj = es.vectors.col(pair.lo);
    const Eigen::VectorXd& pj1 = es.vectors.col(pair.hi);
    const Eigen::MatrixXd& h1 = model->h1();
    const Eigen::MatrixXd& h2 = model->h2();
    const double num =
        pj.dot((std::cos(theta) * h1 + std::sin(theta) * h2) * pj1);
    const double den =
        pj.dot((-std::cos(theta) * h2 + std::sin(theta) * h1) * pj1);
    if (den == 0.0)
      throw Degenerate("polar trace: radial speed vanished", es.gap(pair.lo));
    return {num / (r * den), std::abs(den)};
  }
};

}  // namespace detail

// Integrate du/dt = X_P(u) from `start` until the singularity: adaptive
// Dormand-Prince while far, then the regular polar ODE in rho through the
// handoff radius down to rho = 0. Records the limiting incoming angle:
// the incoming unit tangent is -(cos a_, sin a_).
inline IncomingTrace integrate_to_singularity(const NonMixingField& field,
                                              const ControlPoint& start,
                                              const TraceOptions& opt = {}) {
  if (!field.region.contains(start))
    throw ValidationError("integrate_to_singularity: start outside region");
  const double cn2 = field.model.control_norm() * field.model.control_norm();
  const double f_min = opt.locate.min_descent_rate_rel * cn2;
  const double rho_switch = opt.switch_radius_rel * field.region.diameter();

  std::vector<double> params{0.0};
  std::vector<ControlPoint> pts{start};

  auto rhs = [&](double, const Eigen::Vector2d& y) {
    return field_eval(field, {y.x(), y.y()}).value;
  };

  Eigen::Vector2d u = start.vec();
  double t = 0.0;
  std::optional<Intersection> center;

  auto maybe_locate = [&](const FieldSample& fs) {
    if (center) return;
    const double remaining = fs.value.norm() * fs.gap / fs.descent_rate;
    if (remaining < 40.0 * rho_switch)
      center = locate_intersection(field.model, field.pair,
                                   {u.x(), u.y()}, field.region, opt.locate);
  };

  int steps = 0;
  double h = -1.0;
  while (true) {
    const FieldSample fs = field_eval(field, {u.x(), u.y()});
    if (fs.descent_rate < f_min)
      throw NoDescent("integrate_to_singularity: descent rate vanished",
                      {u.x(), u.y()}, fs.descent_rate);
    maybe_locate(fs);
    if (center && (u - center->point.vec()).norm() <= rho_switch) break;
    if (++steps > opt.max_steps)
      throw MaxSteps("integrate_to_singularity: exceeded max steps");
    const double speed = fs.value.norm();
    if (h <= 0) h = 0.02 * fs.gap / fs.descent_rate;
    // never step past the handoff neighbourhood
    if (center) {
      const double rho = (u - center->point.vec()).norm();
      h = std::min(h, 0.5 * std::max(rho - 0.5 * rho_switch, 0.25 * rho_switch) /
                          speed);
    } else {
      h = std::min(h, 0.25 * fs.gap / fs.descent_rate);
    }
    auto step = detail::dopri5_step(rhs, t, u, h);
    if (step.error > opt.abs_tol && h > 1e-14) {
      h *= std::max(0.2, 0.9 * std::pow(opt.abs_tol / step.error, 0.2));
      continue;  // retry with the smaller step
    }
    u = step.y;
    t += h;
    if (step.error > 0)
      h *= std::min(5.0, std::max(0.2, 0.9 * std::pow(opt.abs_tol / step.error, 0.2)));
    if (!field.region.contains({u.x(), u.y()}))
      throw LeftRegion("integrate_to_singularity: left the region",
                       {u.x(), u.y()});
    params.push_back(t);
    pts.push_back({u.x(), u.y()});
  }

  // polar descent from rho0 to 0
  const Intersection ic = *center;
  const detail::PolarRhs polar{&field.model, field.pair, ic.point,
                               opt.rho_floor_rel * rho_switch};
  const Eigen::Vector2d rel = u - ic.point.vec();
  double rho = rel.norm();
  double theta = std::atan2(rel.y(), rel.x());
  const double drho = rho / opt.polar_steps;
  for (int i = 0; i < opt.polar_steps; ++i) {
    const double r0 = rho - i * drho;
    // RK4 in rho, integrating downward; time accumulates via dt = -drho/|rho_dot|
    const auto v1 = polar(r0, theta);
    const auto v2 = polar(r0 - 0.5 * drho, theta - 0.5 * drho * v1.dtheta_drho);
    const auto v3 = polar(r0 - 0.5 * drho, theta - 0.5 * drho * v2.dtheta_drho);
    const auto v4 = polar(r0 - drho, theta - drho * v3.dtheta_drho);
    theta -= drho / 6.0 *
             (v1.dtheta_drho + 2.0 * v2.dtheta_drho + 2.0 * v3.dtheta_drho +
              v4.dtheta_drho);
    t += drho / v2.abs_rho_dot;  // midpoint speed
    const double r1 = r0 - drho;
    if (i + 1 < opt.polar_steps) {
      params.push_back(t);
      pts.push_back({ic.point.u1 + r1 * std::cos(theta),
                     ic.point.u2 + r1 * std::sin(theta)});
    }
  }
  params.push_back(t);
  pts.push_back(ic.point);

  IncomingTrace out{
      CurveSegment(SegmentKind::Incoming, std::move(params), std::move(pts),
                   VertexEnd{ic.point, ic.pair.lo, wrap_angle(theta)}),
      ic, wrap_angle(theta)};
  return out;
}

// Integral curve of -X_P leaving the intersection with outgoing tangent
// (cos a+, sin a+), traced to the requested arc length.
inline CurveSegment exit_curve(const NonMixingField& field,
                               const Intersection& ic, double alpha_plus,
                               double length, const TraceOptions& opt = {}) {
  if (length <= 0) throw ValidationError("exit_curve: length must be positive");
  const double rho_switch =
      std::min(opt.switch_radius_rel * field.region.diameter(), 0.45 * length);
  const detail::PolarRhs polar{&field.model, field.pair, ic.point,
                               opt.rho_floor_rel * rho_switch};

  std::vector<double> params{0.0};
  std::vector<ControlPoint> pts{ic.point};

  double theta = alpha_plus;
  double t = 0.0;
  double arc = 0.0;
  const int n = opt.polar_steps;
  const double drho = rho_switch / n;
  for (int i = 0; i < n; ++i) {
    const double r0 = i * drho;
    const auto v1 = polar(r0, theta);
    const auto v2 = polar(r0 + 0.5 * drho, theta + 0.5 * drho * v1.dtheta_drho);
    const auto v3 = polar(r0 + 0.5 * drho, theta + 0.5 * drho * v2.dtheta_drho);
    const auto v4 = polar(r0 + drho, theta + drho * v3.dtheta_drho);
    const double slope_mid = v2.dtheta_drho;
    theta += drho / 6.0 *
             (v1.dtheta_drho + 2.0 * v2.dtheta_drho + 2.0 * v3.dtheta_drho +
              v4.dtheta_drho);
    t += drho / v2.abs_rho_dot;
    const double r1 = (i + 1) * drho;
    arc += drho * std::sqrt(1.0 + r1 * r1 * slope_mid * slope_mid);
    params.push_back(t);
    pts.push_back({ic.point.u1 + r1 * std::cos(theta),
                   ic.point.u2 + r1 * std::sin(theta)});
    const ControlPoint cur = pts.back();
    if (!field.region.contains(cur))
      throw LeftRegion("exit_curve: left the region before requested length",
                       cur);
  }

  // Cartesian stage along -X_P
  Eigen::Vector2d u = pts.back().vec();
  auto rhs = [&](double, const Eigen::Vector2d& y) {
    return (-field_eval(field, {y.x(), y.y()}).value).eval();
  };
  double h = -1.0;
  int steps = 0;
  while (arc < length) {
    if (++steps > opt.max_steps)
      throw MaxSteps("exit_curve: exceeded max steps");
    const FieldSample fs = field_eval(field, {u.x(), u.y()});
    const double speed = fs.value.norm();
    if (h <= 0) h = 0.05 * rho_switch / speed;
    h = std::min(h, (length - arc) / speed + 1e-16);
    auto step = detail::dopri5_step(rhs, t, u, h);
    if (step.error > opt.abs_tol && h > 1e-14) {
      h *= std::max(0.2, 0.9 * std::pow(opt.abs_tol / step.error, 0.2));
      continue;
    }
    arc += (step.y - u).norm();
    u = step.y;
    t += h;
    if (step.error > 0)
      h *= std::min(5.0, std::max(0.2, 0.9 * std::pow(opt.abs_tol / step.error, 0.2)));
    if (!field.region.contains({u.x(), u.y()}))
      throw LeftRegion("exit_curve: left the region before requested length",
                       {u.x(), u.y()});
    params.push_back(t);
    pts.push_back({u.x(), u.y()});
  }

  return CurveSegment(SegmentKind::Outgoing, std::move(params), std::move(pts),
                      VertexEnd{ic.point, ic.pair.lo, wrap_angle(alpha_plus)});
}

// ---------------------------------------------------------------------------
// one-sided 2-jet at a singularity endpoint
// ---------------------------------------------------------------------------

enum class SegmentEnd { Start, End };

struct Jet2 {
  Eigen::Vector2d tangent;    // d(gamma)/dt at the endpoint
  Eigen::Vector2d curvature;  // d^2(gamma)/dt^2 at the endpoint
};

namespace detail {

// least-squares quadratic fit over samples within `window` of the endpoint
inline Jet2 jet_fit(const CurveSegment& seg, SegmentEnd end, double window) {
  const double t_end =
      end == SegmentEnd::End ? seg.param_end() : seg.param_begin();
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Matrix<double, 3, 2> atb = Eigen::Matrix<double, 3, 2>::Zero();
  int count = 0;
  for (size_t i = 0; i < seg.size(); ++i) {
    const double s = seg.params()[i] - t_end;
    if (std::abs(s) > window) continue;
    ++count;
    Eigen::Vector3d row(1.0, s, s * s);
    ata += row * row.transpose();
    atb.row(0) += seg.points()[i].vec().transpose();
    atb.row(1) += s * seg.points()[i].vec().transpose();
    atb.row(2) += s * s * seg.points()[i].vec().transpose();
  }
  if (count < 5)
    throw ValidationError(
        "two_jet: fewer than 5 samples near the segment endpoint");
  const Eigen::Matrix<double, 3, 2> coef = ata.ldlt().solve(atb);
  Jet2 jet;
  jet.tangent = coef.row(1).transpose();
  jet.curvature = 2.0 * coef.row(2).transpose();
  return jet;
}

}  // namespace detail

// One-sided first and second parametrized derivatives at the endpoint,
// windowed quadratic fits at two scales combined by Richardson extrapolation.
inline Jet2 two_jet(const CurveSegment& seg, SegmentEnd end,
                    double window_fraction = 0.1) {
  if (seg.size() < 5)
    throw ValidationError("two_jet: segment needs at least 5 samples");
  const double span = seg.param_end() - seg.param_begin();
  const double w = window_fraction * span;
  const Jet2 full = detail::jet_fit(seg, end, w);
  Jet2 half;
  try {
    half = detail::jet_fit(seg, end, 0.5 * w);
  } catch (const ValidationError&) {
    return full;  // not enough samples in the half window
  }
  Jet2 jet;
  // truncation error is O(w^2) for the tangent, O(w) for the curvature
  jet.tangent = (4.0 * half.tangent - full.tangent) / 3.0;
  jet.curvature = 2.0 * half.curvature - full.curvature;
  return jet;
}

}  // namespace conic

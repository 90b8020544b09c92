#pragma once

// Spread-controllability path synthesis: simple-spectrum connectors, incoming
// non-mixing curves, splitting-angle selection at each conical vertex, exit
// curves, and a constant-speed global parametrization. Also the analytic
// vertex replacements used for the error-scaling comparisons.

#include "conic/nonmixing.hpp"

#include <random>

namespace conic {

inline constexpr const char* kPathSchema = "conic-climb/path/1";

class NoSimplePathFound : public Error {
 public:
  NoSimplePathFound(const std::string& msg, ControlPoint blocking, double gap)
      : Error(msg), blocking_point(blocking), gap(gap) {}
  ControlPoint blocking_point;
  double gap;
};

class InconsistentTarget : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// spread targets
// ---------------------------------------------------------------------------

// Prescribed overlap moduli (p_0, ..., p_k), sum of squares 1.
struct SpreadTarget {
  std::vector<double> p;

  explicit SpreadTarget(std::vector<double> probs) : p(std::move(probs)) {
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0) || v > 1.0)
        throw ValidationError("spread target: entries must lie in [0, 1]");
      s += v * v;
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw ValidationError(
          "spread target: squared moduli must sum to 1 (tol 1e-12)");
  }

  int levels() const { return static_cast<int>(p.size()); }
};

// ---------------------------------------------------------------------------
// splitting angles
// ---------------------------------------------------------------------------

struct SplitAngles {
  double option1 = 0.0;
  double option2 = 0.0;
  bool unique = false;
  double beta = 0.0;
};

// The two exit angles realizing the split (cos b, sin b) from incoming angle
// a-: alpha+ = Xi^{-1}(+-b + Xi(a-) + k pi) with k chosen into the range of
// Xi. b = 0 and b = pi/2 are the degenerate unique cases.
inline SplitAngles splitting_angles(const Intersection& ic,
                                    const XiFunction& xi, double alpha_minus,
                                    double beta) {
  if (!(beta >= 0.0 && beta <= M_PI / 2 + 1e-12))
    throw ValidationError("splitting_angles: beta must lie in [0, pi/2]");
  beta = std::clamp(beta, 0.0, M_PI / 2);
  (void)ic;
  SplitAngles out;
  out.beta = beta;
  const double x = xi(alpha_minus);
  const double dir = xi.increasing() ? 1.0 : -1.0;
  auto into_range = [&](double arg) {
    // reduce mod pi into the principal branch range
    double r = std::fmod(dir * arg, M_PI);
    if (r < 0) r += M_PI;
    return dir * r;
  };
  if (beta < 1e-14) {
    out.option1 = out.option2 = wrap_angle(alpha_minus);
    out.unique = true;
    return out;
  }
  if (beta > M_PI / 2 - 1e-14) {
    out.option1 = out.option2 = wrap_angle(alpha_minus + M_PI);
    out.unique = true;
    return out;
  }
  out.option1 = xi.inverse(into_range(beta + x));
  out.option2 = xi.inverse(into_range(-beta + x));
  return out;
}

inline SplitAngles splitting_angles(const Intersection& ic, double alpha_minus,
                                    double beta) {
  return splitting_angles(ic, XiFunction(ic), alpha_minus, beta);
}

// ---------------------------------------------------------------------------
// connectors
// ---------------------------------------------------------------------------

struct ConnectorOptions {
  double gap_tol = 0.0;  // 0: auto, 0.25 * min internal gap at the endpoints
  int samples = 512;     // gap validation samples along a candidate
  int max_retries = 64;
  int grid = 32;  // gap-map resolution over the region bounding box
  uint64_t seed = 12345;
};

namespace detail {

// C1 piecewise-cubic Hermite through waypoints; interior tangents by
// centered differences, end tangents prescribed or chord-based.
inline std::vector<ControlPoint> hermite_chain(
    const std::vector<ControlPoint>& w,
    const std::optional<Eigen::Vector2d>& tangent_from,
    const std::optional<Eigen::Vector2d>& tangent_to, int n_samples) {
  const size_t n = w.size();
  std::vector<double> t(n, 0.0);
  for (size_t i = 1; i < n; ++i)
    t[i] = t[i - 1] + std::max(distance(w[i], w[i - 1]), 1e-12);
  std::vector<Eigen::Vector2d> tan(n);
  for (size_t i = 0; i < n; ++i) {
    if (i == 0)
      tan[i] = (w[1].vec() - w[0].vec()) / (t[1] - t[0]);
    else if (i + 1 == n)
      tan[i] = (w[n - 1].vec() - w[n - 2].vec()) / (t[n - 1] - t[n - 2]);
    else
      tan[i] = (w[i + 1].vec() - w[i - 1].vec()) / (t[i + 1] - t[i - 1]);
  }
  auto rescale = [](const Eigen::Vector2d& dir, const Eigen::Vector2d& like) {
    const double n2 = dir.norm();
    return n2 > 0 ? (dir / n2 * like.norm()).eval() : like;
  };
  if (tangent_from) tan[0] = rescale(*tangent_from, tan[0]);
  if (tangent_to) tan[n - 1] = rescale(*tangent_to, tan[n - 1]);

  std::vector<ControlPoint> out(static_cast<size_t>(n_samples));
  for (int k = 0; k < n_samples; ++k) {
    const double tt = t.back() * k / (n_samples - 1.0);
    size_t i = 0;
    while (i + 2 < n && tt > t[i + 1]) ++i;
    const double h = t[i + 1] - t[i];
    const double s = (tt - t[i]) / h;
    const double s2 = s * s, s3 = s2 * s;
    const Eigen::Vector2d p = (2 * s3 - 3 * s2 + 1) * w[i].vec() +
                              (s3 - 2 * s2 + s) * h * tan[i] +
                              (-2 * s3 + 3 * s2) * w[i + 1].vec() +
                              (s3 - s2) * h * tan[i + 1];
    out[static_cast<size_t>(k)] = ControlPoint::from(p);
  }
  return out;
}

inline double min_internal_gap(const EigenSystem& es, BandRange sigma) {
  double g = std::numeric_limits<double>::infinity();
  for (int l = sigma.lo; l < sigma.hi; ++l) g = std::min(g, es.gap(l));
  return g;
}

}  // namespace detail

// A C2 curve from `from` to `to` along which the band eigenvalues stay
// simple, found by randomized waypoint detours over a precomputed gap map.
// Optional end tangent directions keep junctions with adjacent segments C1.
inline CurveSegment connector(
    const OperatorTriple& model, BandRange sigma, const ControlPoint& from,
    const ControlPoint& to, const Region& region,
    const ConnectorOptions& opt = {},
    const std::optional<Eigen::Vector2d>& tangent_from = std::nullopt,
    const std::optional<Eigen::Vector2d>& tangent_to = std::nullopt) {
  if (distance(from, to) < 1e-15)
    return CurveSegment(SegmentKind::Connector, {0.0}, {from});
  if (sigma.size() < 2) {
    // one level: nothing can collide inside the band
    auto pts = detail::hermite_chain({from, to}, tangent_from, tangent_to, 64);
    std::vector<double> params(pts.size());
    for (size_t i = 0; i < pts.size(); ++i)
      params[i] = static_cast<double>(i) / (pts.size() - 1.0);
    return CurveSegment(SegmentKind::Connector, std::move(params),
                        std::move(pts));
  }

  double gap_tol = opt.gap_tol;
  if (gap_tol <= 0) {
    const double g0 = detail::min_internal_gap(eigensystem(model, from), sigma);
    const double g1 = detail::min_internal_gap(eigensystem(model, to), sigma);
    gap_tol = 0.25 * std::min(g0, g1);
  }

  // gap map over the region bounding box, used to bias detour waypoints
  const auto bb = region.bbox();
  const int g = std::max(8, opt.grid);
  Eigen::MatrixXd gapmap(g, g);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const ControlPoint p{bb[0] + (bb[2] - bb[0]) * i / (g - 1.0),
                           bb[1] + (bb[3] - bb[1]) * j / (g - 1.0)};
      gapmap(i, j) = region.contains(p)
                         ? detail::min_internal_gap(eigensystem(model, p), sigma)
                         : -1.0;
    }
  auto map_gap = [&](const ControlPoint& p) {
    const int i = std::clamp(
        static_cast<int>(std::round((p.u1 - bb[0]) / (bb[2] - bb[0]) * (g - 1))),
        0, g - 1);
    const int j = std::clamp(
        static_cast<int>(std::round((p.u2 - bb[1]) / (bb[3] - bb[1]) * (g - 1))),
        0, g - 1);
    return gapmap(i, j);
  };

  struct Candidate {
    std::vector<ControlPoint> pts;
    double worst_gap;
    ControlPoint worst_at;
    bool in_region;
  };
  auto evaluate = [&](const std::vector<ControlPoint>& waypoints) {
    Candidate c;
    c.pts = detail::hermite_chain(waypoints, tangent_from, tangent_to,
                                  opt.samples);
    c.worst_gap = std::numeric_limits<double>::infinity();
    c.in_region = true;
    for (const auto& p : c.pts) {
      if (!region.contains(p)) {
        c.in_region = false;
        return c;
      }
      const double gp = detail::min_internal_gap(eigensystem(model, p), sigma);
      if (gp < c.worst_gap) {
        c.worst_gap = gp;
        c.worst_at = p;
      }
    }
    return c;
  };

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const Eigen::Vector2d chord = to.vec() - from.vec();
  const Eigen::Vector2d normal =
      Eigen::Vector2d(-chord.y(), chord.x()).normalized();

  Candidate best;
  best.worst_gap = -std::numeric_limits<double>::infinity();
  best.in_region = false;
  for (int attempt = 0; attempt <= opt.max_retries; ++attempt) {
    std::vector<ControlPoint> waypoints{from};
    if (attempt > 0) {
      const int n_way = 1 + attempt / 16;
      bool ok = true;
      for (int wi = 1; wi <= n_way; ++wi) {
        const double frac = static_cast<double>(wi) / (n_way + 1);
        const double spread = (0.2 + 0.8 * (attempt % 16) / 15.0) *
                              std::max(chord.norm(), 0.25 * region.diameter());
        const Eigen::Vector2d p = from.vec() + frac * chord +
                                  (unif(rng) * spread) * normal +
                                  0.25 * unif(rng) * spread *
                                      chord.normalized();
        const ControlPoint wp = ControlPoint::from(p);
        if (!region.contains(wp) || map_gap(wp) < 1.5 * gap_tol) ok = false;
        waypoints.push_back(wp);
      }
      if (!ok) continue;
    }
    waypoints.push_back(to);
    Candidate c = evaluate(waypoints);
    if (c.in_region && c.worst_gap > best.worst_gap) best = c;
    if (c.in_region && c.worst_gap > gap_tol) {
      std::vector<double> params(c.pts.size());
      for (size_t i = 0; i < c.pts.size(); ++i)
        params[i] = static_cast<double>(i) / (c.pts.size() - 1.0);
      return CurveSegment(SegmentKind::Connector, std::move(params),
                          std::move(c.pts));
    }
  }
  std::ostringstream os;
  os << "connector: no simple-spectrum path found from (" << from.u1 << ", "
     << from.u2 << ") to (" << to.u1 << ", " << to.u2 << "); best worst-gap "
     << best.worst_gap << " <= tol " << gap_tol;
  throw NoSimplePathFound(os.str(), best.worst_at,
                          best.in_region ? best.worst_gap : -1.0);
}

// ---------------------------------------------------------------------------
// control paths
// ---------------------------------------------------------------------------

struct PathVertex {
  Intersection intersection;
  double alpha_minus = 0.0;
  double alpha_plus = 0.0;
  double beta = 0.0;
  int option = 1;      // which splitting branch was taken
  double tau = 0.0;    // global parameter of the vertex
  int incoming_index = -1;  // segment index of the incoming curve
};

// Piecewise-smooth control path with constant-speed global parametrization on
// [0, 1]; vertices (C1 breaks) occur only at intersection points.
class ControlPath {
 public:
  ControlPath() = default;

  ControlPath(std::vector<CurveSegment> segments,
              std::vector<PathVertex> vertices)
      : segments_(std::move(segments)), vertices_(std::move(vertices)) {
    if (segments_.empty()) throw ValidationError("path: no segments");
    for (size_t i = 1; i < segments_.size(); ++i)
      if (distance(segments_[i - 1].back(), segments_[i].front()) > 1e-8)
        throw ValidationError("path: segments are not continuous");
    lengths_.resize(segments_.size());
    double total = 0.0;
    for (size_t i = 0; i < segments_.size(); ++i) {
      lengths_[i] = segments_[i].zero_length() ? 0.0 : segments_[i].arc_length();
      total += lengths_[i];
    }
    if (total <= 0) throw ValidationError("path: zero total arc length");
    total_length_ = total;
    knots_.resize(segments_.size() + 1);
    knots_[0] = 0.0;
    for (size_t i = 0; i < segments_.size(); ++i)
      knots_[i + 1] = knots_[i] + lengths_[i] / total;
    knots_.back() = 1.0;
    build_arc_tables();
    for (auto& v : vertices_)
      if (v.incoming_index >= 0)
        v.tau = knots_[static_cast<size_t>(v.incoming_index) + 1];
  }

  const std::vector<CurveSegment>& segments() const { return segments_; }
  const std::vector<PathVertex>& vertices() const { return vertices_; }
  const std::vector<double>& knots() const { return knots_; }
  double total_arc_length() const { return total_length_; }

  ControlPoint start() const { return segments_.front().front(); }
  ControlPoint end() const { return segments_.back().back(); }

  ControlPoint eval(double tau) const {
    tau = std::clamp(tau, 0.0, 1.0);
    const size_t i = segment_index(tau);
    const auto& seg = segments_[i];
    if (seg.zero_length()) return seg.front();
    const double frac = (tau - knots_[i]) / (knots_[i + 1] - knots_[i]);
    return seg.curve().eval(param_at_arc(i, frac * lengths_[i]));
  }

  // d(gamma)/d(tau); magnitude is the total arc length except at vertices
  Eigen::Vector2d derivative(double tau) const {
    tau = std::clamp(tau, 0.0, 1.0);
    const size_t i = segment_index(tau);
    const auto& seg = segments_[i];
    if (seg.zero_length()) return Eigen::Vector2d::Zero();
    const double frac = (tau - knots_[i]) / (knots_[i + 1] - knots_[i]);
    const Eigen::Vector2d d =
        seg.curve().deriv(param_at_arc(i, frac * lengths_[i]));
    const double n = d.norm();
    return n > 0 ? (d / n * total_length_).eval() : d;
  }

  nlohmann::json to_json(int sample_density = 10000) const {
    nlohmann::json j;
    j["schema"] = kPathSchema;
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : segments_) segs.push_back(segment_to_json(s, sample_density));
    j["segments"] = segs;
    nlohmann::json verts = nlohmann::json::array();
    for (const auto& v : vertices_) {
      nlohmann::json jv;
      jv["intersection"] = intersection_to_json(v.intersection);
      jv["alpha_minus"] = v.alpha_minus;
      jv["alpha_plus"] = v.alpha_plus;
      jv["beta"] = v.beta;
      jv["option"] = v.option;
      jv["incoming_index"] = v.incoming_index;
      verts.push_back(jv);
    }
    j["vertices"] = verts;
    j["knots"] = knots_;
    return j;
  }

  static ControlPath from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != kPathSchema)
      throw ParseError("path: unsupported schema");
    std::vector<CurveSegment> segs;
    for (const auto& js : j.at("segments")) segs.push_back(segment_from_json(js));
    std::vector<PathVertex> verts;
    for (const auto& jv : j.at("vertices")) {
      PathVertex v;
      v.intersection = intersection_from_json(jv.at("intersection"));
      v.alpha_minus = jv.at("alpha_minus").get<double>();
      v.alpha_plus = jv.at("alpha_plus").get<double>();
      v.beta = jv.at("beta").get<double>();
      v.option = jv.value("option", 1);
      v.incoming_index = jv.value("incoming_index", -1);
      verts.push_back(v);
    }
    return ControlPath(std::move(segs), std::move(verts));
  }

 private:
  size_t segment_index(double tau) const {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), tau);
    size_t i = static_cast<size_t>(it - knots_.begin());
    i = i > 0 ? i - 1 : 0;
    if (i >= segments_.size()) i = segments_.size() - 1;
    // skip zero-width intervals
    while (i + 1 < segments_.size() && knots_[i + 1] <= tau &&
           knots_[i + 1] == knots_[i])
      ++i;
    while (i > 0 && lengths_[i] == 0.0) --i;
    return i;
  }

  void build_arc_tables() {
    arc_params_.resize(segments_.size());
    arc_cum_.resize(segments_.size());
    for (size_t i = 0; i < segments_.size(); ++i) {
      const auto& seg = segments_[i];
      if (seg.zero_length()) continue;
      const int n = 1024;
      auto& ts = arc_params_[i];
      auto& cs = arc_cum_[i];
      ts.resize(n + 1);
      cs.resize(n + 1);
      ControlPoint prev = seg.front();
      cs[0] = 0.0;
      ts[0] = seg.param_begin();
      for (int k = 1; k <= n; ++k) {
        const double t = seg.param_begin() +
                         (seg.param_end() - seg.param_begin()) * k / n;
        const ControlPoint p = seg.curve().eval(t);
        ts[static_cast<size_t>(k)] = t;
        cs[static_cast<size_t>(k)] =
            cs[static_cast<size_t>(k) - 1] + distance(prev, p);
        prev = p;
      }
      // normalize the table to the Simpson arc length used in knots
      const double scale = lengths_[i] / std::max(cs.back(), 1e-300);
      for (auto& v : cs) v *= scale;
    }
  }

  double param_at_arc(size_t i, double s) const {
    const auto& ts = arc_params_[i];
    const auto& cs = arc_cum_[i];
    if (s <= 0) return ts.front();
    if (s >= cs.back()) return ts.back();
    auto it = std::upper_bound(cs.begin(), cs.end(), s);
    const size_t k = static_cast<size_t>(it - cs.begin());
    const double w = (s - cs[k - 1]) / std::max(cs[k] - cs[k - 1], 1e-300);
    return ts[k - 1] + w * (ts[k] - ts[k - 1]);
  }

  std::vector<CurveSegment> segments_;
  std::vector<PathVertex> vertices_;
  std::vector<double> lengths_;
  std::vector<double> knots_;
  std::vector<std::vector<double>> arc_params_;
  std::vector<std::vector<double>> arc_cum_;
  double total_length_ = 0.0;
};

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

struct PlanOptions {
  double entry_radius = 0.0;  // 0: auto from the vertex geometry
  double exit_radius = 0.0;
  double vertex_region_cap = 0.7;
  ConnectorOptions connector;
  TraceOptions trace;
};

namespace detail {

inline double boundary_distance(const Region& r, const ControlPoint& p) {
  if (r.kind == Region::Kind::Disc)
    return std::max(0.0, r.radius - distance(p, r.center));
  return std::max(0.0, std::min({p.u1 - r.x0, r.x1 - p.u1, p.u2 - r.y0,
                                 r.y1 - p.u2}));
}

// One climb leg: connector to the vertex disc, incoming non-mixing curve,
// split by `beta`, exit curve. Appends segments and the vertex record and
// advances the cursor to the exit endpoint.
inline void append_vertex_leg(const OperatorTriple& model, BandRange sigma,
                              const Intersection& ic, double beta,
                              double r_vertex, const Region& region,
                              const PlanOptions& opt, ControlPoint& cur,
                              std::optional<Eigen::Vector2d>& cur_tangent,
                              std::vector<CurveSegment>& segments,
                              std::vector<PathVertex>& vertices) {
  const double r_in = opt.entry_radius > 0 ? opt.entry_radius : 0.55 * r_vertex;
  const double r_out = opt.exit_radius > 0 ? opt.exit_radius : 0.55 * r_vertex;
  const NonMixingField field =
      make_field(model, ic.pair, Region::disc(ic.point, r_vertex));

  // entry point on the vertex disc, toward the current position
  ControlPoint q = cur;
  if (distance(cur, ic.point) > r_in) {
    const Eigen::Vector2d dir = (cur.vec() - ic.point.vec()).normalized();
    q = ControlPoint::from(ic.point.vec() + r_in * dir);
  }

  IncomingTrace trace = integrate_to_singularity(field, q, opt.trace);

  if (distance(cur, q) > 1e-15) {
    const std::optional<Eigen::Vector2d> tangent_in =
        field_eval(field, q).value;
    segments.push_back(connector(model, sigma, cur, q, region, opt.connector,
                                 cur_tangent, tangent_in));
  }
  segments.push_back(trace.segment);

  XiFunction xi(trace.intersection);
  const SplitAngles split =
      splitting_angles(trace.intersection, xi, trace.alpha_minus, beta);

  CurveSegment exit_seg;
  int option = 1;
  try {
    exit_seg =
        exit_curve(field, trace.intersection, split.option1, r_out, opt.trace);
  } catch (const LeftRegion&) {
    if (split.unique) throw;
    exit_seg =
        exit_curve(field, trace.intersection, split.option2, r_out, opt.trace);
    option = 2;
  }

  PathVertex v;
  v.intersection = trace.intersection;
  v.alpha_minus = trace.alpha_minus;
  v.alpha_plus = option == 1 ? split.option1 : split.option2;
  v.beta = beta;
  v.option = option;
  v.incoming_index = static_cast<int>(segments.size()) - 1;
  vertices.push_back(v);

  cur = exit_seg.back();
  cur_tangent = -field_eval(field, cur).value;
  segments.push_back(std::move(exit_seg));
}

}  // namespace detail

// Builds the climb sigma_0 + in_0 + out_0 + sigma_1 + ... + sigma_final.
// At vertex j the split leaves p_j of the running amplitude on level j and
// forwards the rest: beta_j = atan2(sqrt(A_j^2 - p_j^2), p_j).
inline ControlPath plan(const OperatorTriple& model, BandRange sigma,
                        const std::vector<Intersection>& intersections,
                        const ControlPoint& u0, const ControlPoint& u1,
                        int source_level, const SpreadTarget& target,
                        const Region& region, const PlanOptions& opt = {}) {
  if (target.levels() != sigma.size())
    throw InconsistentTarget("plan: target length must match the band size");
  if (source_level < 0 || source_level >= sigma.size())
    throw ValidationError("plan: source level outside the band");
  for (int l = 0; l < source_level; ++l)
    if (target.p[static_cast<size_t>(l)] > 1e-12)
      throw InconsistentTarget(
          "plan: target has mass below the source level; the climb cannot "
          "reach it");
  int last_level = 0;
  for (int l = 0; l < target.levels(); ++l)
    if (target.p[static_cast<size_t>(l)] > 1e-12) last_level = l;
  if (last_level - 1 >= static_cast<int>(intersections.size()))
    throw InconsistentTarget(
        "plan: target has mass above the last provided intersection");
  for (size_t j = 0; j < intersections.size(); ++j)
    if (intersections[j].pair.lo != sigma.lo + static_cast<int>(j))
      throw ValidationError("plan: intersections must be ordered by level");
  if (!region.contains(u0) || !region.contains(u1))
    throw ValidationError("plan: endpoints outside the region");

  std::vector<CurveSegment> segments;
  std::vector<PathVertex> vertices;

  auto vertex_radius = [&](size_t j) {
    double d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < intersections.size(); ++k)
      if (k != j)
        d = std::min(d, distance(intersections[j].point,
                                 intersections[k].point));
    d = std::min(d * 0.35, opt.vertex_region_cap);
    d = std::min(d, 0.8 * detail::boundary_distance(
                            region, intersections[j].point));
    return d;
  };

  ControlPoint cur = u0;
  std::optional<Eigen::Vector2d> cur_tangent;
  double amplitude = 1.0;  // running modulus carried by the climbing level

  for (int j = source_level; j <= last_level - 1; ++j) {
    const auto& given = intersections[static_cast<size_t>(j)];
    // split: leave p_j on level j, forward the rest
    const double pj = target.p[static_cast<size_t>(j)];
    const double rest2 = std::max(amplitude * amplitude - pj * pj, 0.0);
    const double beta = std::atan2(std::sqrt(rest2), pj);
    detail::append_vertex_leg(model, sigma, given, beta,
                              vertex_radius(static_cast<size_t>(j)), region,
                              opt, cur, cur_tangent, segments, vertices);
    amplitude *= std::sin(beta);
  }

  if (distance(cur, u1) > 1e-15)
    segments.push_back(connector(model, sigma, cur, u1, region, opt.connector,
                                 cur_tangent, std::nullopt));

  if (segments.empty())
    segments.push_back(
        CurveSegment(SegmentKind::Connector,
                     std::vector<double>{0.0, 1.0},
                     std::vector<ControlPoint>{u0, u1}));

  return ControlPath(std::move(segments), std::move(vertices));
}

// A single in-and-out pass through one intersection with a prescribed
// splitting angle beta; the path ends at the exit-curve endpoint. This is the
// two-level splitting experiment of the vertex construction, including the
// retracing beta = 0 case that a target-driven plan would skip.
inline ControlPath vertex_split_path(const OperatorTriple& model,
                                     BandRange sigma, const Intersection& ic,
                                     const ControlPoint& u0, double beta,
                                     const Region& region,
                                     const PlanOptions& opt = {}) {
  if (!region.contains(u0))
    throw ValidationError("vertex_split_path: start outside the region");
  const double r_vertex =
      std::min(opt.vertex_region_cap,
               0.8 * detail::boundary_distance(region, ic.point));
  std::vector<CurveSegment> segments;
  std::vector<PathVertex> vertices;
  ControlPoint cur = u0;
  std::optional<Eigen::Vector2d> cur_tangent;
  detail::append_vertex_leg(model, sigma, ic, beta, r_vertex, region, opt, cur,
                            cur_tangent, segments, vertices);
  return ControlPath(std::move(segments), std::move(vertices));
}

// ---------------------------------------------------------------------------
// analytic vertex replacements
// ---------------------------------------------------------------------------

enum class VariantMode { GenericC2, JetMatched };

// Replaces each incoming/outgoing non-mixing pair by analytic (polynomial)
// arcs with the same one-sided tangents at the vertex: jet-matched arcs also
// copy the one-sided second derivative, generic arcs perturb the geometric
// curvature by 0.5 / path-diameter.
inline ControlPath vertexless_variants(const ControlPath& path,
                                       VariantMode mode) {
  const auto& segs = path.segments();
  if (path.vertices().empty())
    throw ValidationError("vertexless_variants: path has no vertices");

  // path bounding box diameter sets the curvature perturbation scale
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0,
         y1 = -x0;
  for (const auto& s : segs)
    for (const auto& p : s.points()) {
      x0 = std::min(x0, p.u1);
      x1 = std::max(x1, p.u1);
      y0 = std::min(y0, p.u2);
      y1 = std::max(y1, p.u2);
    }
  const double diam = std::hypot(x1 - x0, y1 - y0);
  const double kappa_pert = 0.5 / std::max(diam, 1e-12);

  auto perturb_curvature = [&](const Jet2& jet) {
    Eigen::Vector2d c = jet.curvature;
    if (mode == VariantMode::GenericC2) {
      const Eigen::Vector2d that = jet.tangent.normalized();
      const Eigen::Vector2d nhat(-that.y(), that.x());
      c += jet.tangent.squaredNorm() * kappa_pert * nhat;
    }
    return c;
  };

  std::vector<CurveSegment> out_segs(segs.begin(), segs.end());
  const int n_samples = 1200;

  for (const auto& v : path.vertices()) {
    const int i_in = v.incoming_index;
    const int i_out = i_in + 1;
    if (i_in < 0 || i_out >= static_cast<int>(segs.size()))
      throw ValidationError("vertexless_variants: malformed vertex record");
    const CurveSegment& seg_in = segs[static_cast<size_t>(i_in)];
    const CurveSegment& seg_out = segs[static_cast<size_t>(i_out)];

    const Jet2 jet_in = two_jet(seg_in, SegmentEnd::End);
    const Jet2 jet_out = two_jet(seg_out, SegmentEnd::Start);
    const double span_in = seg_in.param_end() - seg_in.param_begin();
    const double span_out = seg_out.param_end() - seg_out.param_begin();

    // incoming replacement: clamp position+tangent at the outer end,
    // position+tangent+curvature at the vertex
    {
      const Eigen::Vector2d p0 = seg_in.front().vec();
      const Eigen::Vector2d d0 = seg_in.curve().deriv(seg_in.param_begin()) *
                                 span_in;
      const Eigen::Vector2d p1 = seg_in.back().vec();
      const Eigen::Vector2d d1 = jet_in.tangent * span_in;
      const Eigen::Vector2d dd1 =
          perturb_curvature(jet_in) * span_in * span_in;
      QuarticArc arc(p0, d0, p1, d1, dd1);
      std::vector<double> params(n_samples);
      std::vector<ControlPoint> pts(n_samples);
      for (int k = 0; k < n_samples; ++k) {
        const double s = k / (n_samples - 1.0);
        params[static_cast<size_t>(k)] = seg_in.param_begin() + s * span_in;
        pts[static_cast<size_t>(k)] = ControlPoint::from(arc.eval(s));
      }
      pts.front() = seg_in.front();
      pts.back() = seg_in.back();
      out_segs[static_cast<size_t>(i_in)] = CurveSegment(
          SegmentKind::Incoming, std::move(params), std::move(pts),
          seg_in.end_data());
    }

    // outgoing replacement, mirrored
    {
      const Eigen::Vector2d p1 = seg_out.back().vec();
      const Eigen::Vector2d d1 = seg_out.curve().deriv(seg_out.param_end()) *
                                 span_out;
      const Eigen::Vector2d p0 = seg_out.front().vec();
      const Eigen::Vector2d d0 = jet_out.tangent * span_out;
      const Eigen::Vector2d dd0 =
          perturb_curvature(jet_out) * span_out * span_out;
      // reverse the parameter so the jet-clamped end is s = 1
      QuarticArc arc(p1, -d1, p0, -d0, dd0);
      std::vector<double> params(n_samples);
      std::vector<ControlPoint> pts(n_samples);
      for (int k = 0; k < n_samples; ++k) {
        const double s = k / (n_samples - 1.0);
        params[static_cast<size_t>(k)] = seg_out.param_begin() + s * span_out;
        pts[static_cast<size_t>(k)] =
            ControlPoint::from(arc.eval(1.0 - s));
      }
      pts.front() = seg_out.front();
      pts.back() = seg_out.back();
      out_segs[static_cast<size_t>(i_out)] = CurveSegment(
          SegmentKind::Outgoing, std::move(params), std::move(pts),
          seg_out.end_data());
    }

    // containment: replacements must stay within the reach of the originals
    for (int idx : {i_in, i_out}) {
      double r_orig = 0.0, r_new = 0.0;
      for (const auto& p : segs[static_cast<size_t>(idx)].points())
        r_orig = std::max(r_orig, distance(p, v.intersection.point));
      for (const auto& p : out_segs[static_cast<size_t>(idx)].points())
        r_new = std::max(r_new, distance(p, v.intersection.point));
      if (r_new > 1.3 * r_orig + 1e-9)
        throw ValidationError(
            "vertexless_variants: replacement leaves the certified "
            "neighbourhood");
    }
  }

  return ControlPath(std::move(out_segs), path.vertices());
}

// Predicted overlap moduli from the planned vertex angles alone: the chain of
// 2x2 rotations by beta_j applied to (1, 0, ..., 0).
inline std::vector<double> predicted_moduli(const ControlPath& path,
                                            int levels, int source_level = 0) {
  std::vector<double> v(static_cast<size_t>(levels), 0.0);
  v[static_cast<size_t>(source_level)] = 1.0;
  int l = source_level;
  for (const auto& vert : path.vertices()) {
    const double a = v[static_cast<size_t>(l)];
    v[static_cast<size_t>(l)] = a * std::cos(vert.beta);
    v[static_cast<size_t>(l) + 1] = a * std::sin(vert.beta);
    ++l;
  }
  return v;
}

}  // namespace conic

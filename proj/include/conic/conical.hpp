#pragma once

// Conical-intersection machinery: the conicity matrix, conicality
// certification with limit-basis anchoring, the Xi rotation law of the limit
// eigenbasis, intersection location by descent along the non-mixing direction,
// and structural-stability probing.

#include "conic/spectral.hpp"

#include <json.hpp>

#include <vector>

namespace conic {

inline constexpr const char* kIntersectionSchema = "conic-climb/intersection/1";

// ---------------------------------------------------------------------------
// conicity matrix
// ---------------------------------------------------------------------------

// 2x2 matrix with rows indexed by (H1, H2) and columns by (cross term,
// half-difference term); nonsingular iff the intersection is conical.
struct ConicityMatrix {
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();

  double det() const { return m.determinant(); }
  double abs_det() const { return std::abs(m.determinant()); }
};

inline ConicityMatrix conicity_matrix(const OperatorTriple& model,
                                      const Eigen::VectorXd& psi1,
                                      const Eigen::VectorXd& psi2) {
  if (psi1.size() != model.dim() || psi2.size() != model.dim())
    throw ValidationError("conicity_matrix: vector dimension mismatch");
  if (std::abs(psi1.norm() - 1.0) > 1e-10 ||
      std::abs(psi2.norm() - 1.0) > 1e-10 || std::abs(psi1.dot(psi2)) > 1e-10)
    throw ValidationError("conicity_matrix: input pair is not orthonormal");
  ConicityMatrix c;
  const auto& h1 = model.h1();
  const auto& h2 = model.h2();
  c.m(0, 0) = psi1.dot(h1 * psi2);
  c.m(0, 1) = 0.5 * (psi2.dot(h1 * psi2) - psi1.dot(h1 * psi1));
  c.m(1, 0) = psi1.dot(h2 * psi2);
  c.m(1, 1) = 0.5 * (psi2.dot(h2 * psi2) - psi1.dot(h2 * psi1));
  return c;
}

// ---------------------------------------------------------------------------
// certification
// ---------------------------------------------------------------------------

class NotDegenerate : public Error {
 public:
  NotDegenerate(const std::string& msg, double gap) : Error(msg), gap(gap) {}
  double gap;
};

class NotConical : public Error {
 public:
  NotConical(const std::string& msg, double abs_det)
      : Error(msg), abs_det(abs_det) {}
  double abs_det;
};

class LeftRegion : public Error {
 public:
  LeftRegion(const std::string& msg, ControlPoint at) : Error(msg), at(at) {}
  ControlPoint at;
};

class NoDescent : public Error {
 public:
  NoDescent(const std::string& msg, ControlPoint at, double descent_rate)
      : Error(msg), at(at), descent_rate(descent_rate) {}
  ControlPoint at;
  double descent_rate;
};

class MaxSteps : public Error {
 public:
  using Error::Error;
};

struct ConicalOptions {
  // scale-aware thresholds: |det M| carries (energy)^2 units
  double degeneracy_tol_rel = 1e-8;  // of max(||H(u)||, ||H1||+||H2||)
  double conical_tol_rel = 1e-6;     // of (||H1||+||H2||)^2
  int rays = 32;                     // cone-constant sampling
  double ray_radius = 1e-3;
};

// A certified conical intersection. The limit basis is the alpha=0 radial
// limit of the band eigenvectors, anchored exactly by diagonalizing the
// compression of H1 onto the degenerate eigenspace, with the sign of the
// second vector chosen so that Xi is increasing (range [0, pi)).
struct Intersection {
  ControlPoint point;
  BandRange pair;                // (j, j+1)
  double cone_constant = 0.0;    // min over sampled rays of gap/r
  Eigen::MatrixXd limit_basis;   // dim x 2 columns (phi_j^0, phi_{j+1}^0)
  ConicityMatrix conicity;       // at the limit basis
  double degeneracy_gap = 0.0;   // residual gap at `point`
  int branch = +1;               // recorded Xi branch after normalization
};

inline double degeneracy_scale(const OperatorTriple& model,
                               const EigenSystem& es) {
  return std::max(es.norm(), model.control_norm());
}

inline Intersection is_conical(const OperatorTriple& model,
                               const ControlPoint& candidate, BandRange pair,
                               const ConicalOptions& opt = {}) {
  if (pair.hi != pair.lo + 1 || pair.lo < 0 || pair.hi >= model.dim())
    throw ValidationError("is_conical: band pair must be (j, j+1)");
  const int j = pair.lo;
  const EigenSystem es = eigensystem(model, candidate);
  const double tol = opt.degeneracy_tol_rel * degeneracy_scale(model, es);
  const double gap = es.gap(j);
  if (!(gap < tol)) {
    std::ostringstream os;
    os << "is_conical: eigenvalues (" << j << ", " << j + 1
       << ") are not degenerate at (" << candidate.u1 << ", " << candidate.u2
       << "): gap " << gap << " >= tol " << tol;
    throw NotDegenerate(os.str(), gap);
  }

  // Anchor the limit basis: first-order degenerate perturbation theory along
  // the ray (t, 0) says the radial-limit eigenvectors diagonalize the
  // compression of H1 onto the degenerate eigenspace, lower sheet first.
  const Eigen::VectorXd w1 = es.vectors.col(j);
  const Eigen::VectorXd w2 = es.vectors.col(j + 1);
  const double a = w1.dot(model.h1() * w1);
  const double b = w1.dot(model.h1() * w2);
  const double c = w2.dot(model.h1() * w2);
  const double phi = 0.5 * std::atan2(2.0 * b, a - c);
  Eigen::VectorXd lo = -std::sin(phi) * w1 + std::cos(phi) * w2;
  Eigen::VectorXd hi = std::cos(phi) * w1 + std::sin(phi) * w2;

  ConicityMatrix cm = conicity_matrix(model, lo, hi);
  const double conical_tol =
      opt.conical_tol_rel * model.control_norm() * model.control_norm();
  if (!(cm.abs_det() > conical_tol)) {
    std::ostringstream os;
    os << "is_conical: |det M| = " << cm.abs_det() << " <= tol " << conical_tol
       << " at (" << candidate.u1 << ", " << candidate.u2 << ")";
    throw NotConical(os.str(), cm.abs_det());
  }

  // Branch normalization: Xi'(0) = -m10 / (2 m01) with m01 > 0 by the
  // eigenvalue ordering; flip the upper vector if Xi would decrease.
  if (cm.m(1, 0) > 0) {
    hi = -hi;
    cm = conicity_matrix(model, lo, hi);
  }

  Intersection out;
  out.point = candidate;
  out.pair = pair;
  out.limit_basis.resize(model.dim(), 2);
  out.limit_basis.col(0) = lo;
  out.limit_basis.col(1) = hi;
  out.conicity = cm;
  out.degeneracy_gap = gap;
  out.branch = +1;

  const int rays = std::max(32, opt.rays);
  double cone = std::numeric_limits<double>::infinity();
  for (int k = 0; k < rays; ++k) {
    const double ang = 2.0 * M_PI * k / rays;
    const ControlPoint p{candidate.u1 + opt.ray_radius * std::cos(ang),
                         candidate.u2 + opt.ray_radius * std::sin(ang)};
    cone = std::min(cone, eigensystem(model, p).gap(j) / opt.ray_radius);
  }
  if (!(cone > 0)) {
    std::ostringstream os;
    os << "is_conical: sampled cone constant " << cone << " is not positive";
    throw NotConical(os.str(), cm.abs_det());
  }
  out.cone_constant = cone;
  return out;
}

// ---------------------------------------------------------------------------
// Xi: rotation angle of the limit eigenbasis as a function of the approach
// direction. Solves (cos a, sin a) M (cos 2Xi, sin 2Xi)^T = 0 with Xi(0) = 0,
// continuous and strictly monotone. Closed form: Xi(a) is half the
// continuously unwrapped angle swept by the row vector (cos a, sin a) M.
// ---------------------------------------------------------------------------

class XiFunction {
 public:
  explicit XiFunction(const Intersection& ic) : m_(ic.conicity.m) {
    if (std::abs(m_.determinant()) <= 0)
      throw ValidationError("xi: singular conicity matrix");
    build_table(4096);
  }

  // Xi(alpha), alpha taken mod 2*pi into [0, 2*pi).
  double operator()(double alpha) const {
    const double a = wrap_angle(alpha);
    const size_t i = std::min(
        static_cast<size_t>(a / (2.0 * M_PI) * (psi_.size() - 1)),
        psi_.size() - 2);
    double p = raw_psi(a);
    // local unwrap against the table; true increments between nodes are small
    p += 2.0 * M_PI * std::round((psi_[i] - p) / (2.0 * M_PI));
    return 0.5 * (p - psi_[0]);
  }

  // dXi/dalpha = det(M) / (2 |g(alpha)|^2)
  double derivative(double alpha) const {
    const Eigen::Vector2d g =
        m_.transpose() * Eigen::Vector2d(std::cos(alpha), std::sin(alpha));
    return m_.determinant() / (2.0 * g.squaredNorm());
  }

  bool increasing() const { return m_.determinant() > 0; }

  // sup of |Xi| over [0, 2*pi); the range is [0, pi) or (-pi, 0].
  double range_sup() const { return M_PI; }

  // Inverse on the range; xi is reduced mod pi into the principal range.
  double inverse(double xi) const {
    const double dir = increasing() ? 1.0 : -1.0;
    double target = std::fmod(dir * xi, M_PI);
    if (target < 0) target += M_PI;
    target *= dir;
    double a_lo = 0.0, a_hi = 2.0 * M_PI;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (a_lo + a_hi);
      if (dir * ((*this)(mid)-target) < 0)
        a_lo = mid;
      else
        a_hi = mid;
    }
    return wrap_angle(0.5 * (a_lo + a_hi));
  }

 private:
  double raw_psi(double a) const {
    const Eigen::Vector2d g =
        m_.transpose() * Eigen::Vector2d(std::cos(a), std::sin(a));
    return std::atan2(g.y(), g.x());
  }

  void build_table(int n) {
    psi_.assign(static_cast<size_t>(n) + 1, 0.0);
    psi_[0] = raw_psi(0.0);
    double prev = psi_[0];
    double max_step = 0.0;
    for (int i = 1; i <= n; ++i) {
      double p = raw_psi(2.0 * M_PI * i / n);
      p += 2.0 * M_PI * std::round((prev - p) / (2.0 * M_PI));
      max_step = std::max(max_step, std::abs(p - prev));
      psi_[static_cast<size_t>(i)] = p;
      prev = p;
    }
    if (max_step > M_PI / 2 && n < 100000) {
      build_table(16 * n);  // very anisotropic conicity matrix
      return;
    }
    if (max_step > M_PI / 2)
      throw Error("xi: conicity matrix too ill-conditioned to trace branch");
  }

  Eigen::Matrix2d m_;
  std::vector<double> psi_;
};

// Limit eigenbasis along the ray at angle alpha:
// (cos Xi phi_j^0 + sin Xi phi_{j+1}^0, -sin Xi phi_j^0 + cos Xi phi_{j+1}^0).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> limit_basis_at(
    const Intersection& ic, const XiFunction& xi, double alpha) {
  const double x = xi(alpha);
  const Eigen::VectorXd p0 = ic.limit_basis.col(0);
  const Eigen::VectorXd p1 = ic.limit_basis.col(1);
  return {std::cos(x) * p0 + std::sin(x) * p1,
          -std::sin(x) * p0 + std::cos(x) * p1};
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> limit_basis_at(
    const Intersection& ic, double alpha) {
  return limit_basis_at(ic, XiFunction(ic), alpha);
}

// ---------------------------------------------------------------------------
// pointwise descent field (shared with the non-mixing module)
// ---------------------------------------------------------------------------

namespace detail {

struct RawField {
  Eigen::Vector2d direction;  // the non-mixing field, descent sign applied
  double descent_rate = 0.0;  // F(u): gap derivative along the field is -F
  double gap = 0.0;
  double gap_lo = 0.0;  // distance to the band neighbour below (inf if none)
  double gap_hi = 0.0;  // distance to the band neighbour above
};

// Field components from the band eigenvectors. The raw vector
// (-<phi_j, H2 phi_{j+1}>, <phi_j, H1 phi_{j+1}>) moves the gap at the rate
// 2 det M(phi_j, phi_{j+1}); the returned direction carries the sign that
// makes the gap decrease, which is independent of the eigenvector sign gauge.
inline RawField raw_descent_field(const OperatorTriple& model, BandRange pair,
                                  const EigenSystem& es) {
  const int j = pair.lo;
  const Eigen::VectorXd& pj = es.vectors.col(j);
  const Eigen::VectorXd& pj1 = es.vectors.col(j + 1);
  const double m00 = pj.dot(model.h1() * pj1);
  const double m01 = 0.5 * (pj1.dot(model.h1() * pj1) - pj.dot(model.h1() * pj));
  const double m10 = pj.dot(model.h2() * pj1);
  const double m11 = 0.5 * (pj1.dot(model.h2() * pj1) - pj.dot(model.h2() * pj));
  const double det = m00 * m11 - m01 * m10;
  RawField f;
  f.gap = es.gap(j);
  f.gap_lo = j > 0 ? es.gap(j - 1) : std::numeric_limits<double>::infinity();
  f.gap_hi = j + 2 < es.values.size()
                 ? es.gap(j + 1)
                 : std::numeric_limits<double>::infinity();
  f.direction = Eigen::Vector2d(-m10, m00);
  // directional derivative of the gap along (-m10, m00) is exactly 2 det M
  if (det > 0) f.direction = -f.direction;
  f.descent_rate = 2.0 * std::abs(det);
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// locator
// ---------------------------------------------------------------------------

struct LocateOptions {
  int max_flow_steps = 20000;
  int max_newton_steps = 60;
  double min_descent_rate_rel = 1e-10;  // of (||H1||+||H2||)^2
  ConicalOptions conical;
};

// Follow the non-mixing descent from `seed` until the band gap collapses,
// then polish with a frozen-basis 2x2 Newton iteration and certify.
inline Intersection locate_intersection(const OperatorTriple& model,
                                        BandRange pair,
                                        const ControlPoint& seed,
                                        const Region& region,
                                        const LocateOptions& opt = {}) {
  if (!region.contains(seed))
    throw ValidationError("locate_intersection: seed outside region");
  const double cn2 = model.control_norm() * model.control_norm();
  const double f_min = opt.min_descent_rate_rel * cn2;
  Eigen::Vector2d u = seed.vec();

  EigenSystem es = eigensystem(model, {u.x(), u.y()});
  const double scale0 = degeneracy_scale(model, es);
  const double newton_gap = 1e-3 * scale0;

  auto field_at = [&](const Eigen::Vector2d& p) {
    return detail::raw_descent_field(model, pair,
                                     eigensystem(model, {p.x(), p.y()}));
  };

  double gap = es.gap(pair.lo);
  int steps = 0;
  while (gap >= newton_gap) {
    if (++steps > opt.max_flow_steps)
      throw MaxSteps("locate_intersection: flow exceeded max steps");
    const auto f0 = field_at(u);
    if (f0.descent_rate < f_min) {
      std::ostringstream os;
      os << "locate_intersection: descent rate " << f0.descent_rate
         << " vanished at (" << u.x() << ", " << u.y() << ")";
      throw NoDescent(os.str(), {u.x(), u.y()}, f0.descent_rate);
    }
    // step sized to shave ~5% of the gap, capped against the region size
    double dt = 0.05 * f0.gap / f0.descent_rate;
    const double speed = f0.direction.norm();
    if (speed * dt > 0.05 * region.diameter())
      dt = 0.05 * region.diameter() / speed;
    const Eigen::Vector2d k1 = f0.direction;
    const Eigen::Vector2d k2 = field_at(u + 0.5 * dt * k1).direction;
    const Eigen::Vector2d k3 = field_at(u + 0.5 * dt * k2).direction;
    const Eigen::Vector2d k4 = field_at(u + dt * k3).direction;
    u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!region.contains({u.x(), u.y()})) {
      std::ostringstream os;
      os << "locate_intersection: flow left the region at (" << u.x() << ", "
         << u.y() << ")";
      throw LeftRegion(os.str(), {u.x(), u.y()});
    }
    gap = eigensystem(model, {u.x(), u.y()}).gap(pair.lo);
  }

  // Newton polish on the frozen-basis 2x2 compression of H(u).
  const double dtol =
      opt.conical.degeneracy_tol_rel *
      std::max(eigensystem(model, {u.x(), u.y()}).norm(), model.control_norm());
  for (int it = 0; it <= opt.max_newton_steps; ++it) {
    es = eigensystem(model, {u.x(), u.y()});
    if (es.gap(pair.lo) < dtol)
      return is_conical(model, {u.x(), u.y()}, pair, opt.conical);
    if (it == opt.max_newton_steps) break;
    const Eigen::MatrixXd v = es.vectors.middleCols(pair.lo, 2);
    auto resid = [&](const Eigen::Vector2d& p) {
      const Eigen::Matrix2d bm =
          v.transpose() * assemble(model, {p.x(), p.y()}) * v;
      return Eigen::Vector2d(bm(0, 0) - bm(1, 1), 2.0 * bm(0, 1));
    };
    const double fd = 1e-7 * (1.0 + u.norm());
    Eigen::Matrix2d jac;
    jac.col(0) = (resid(u + Eigen::Vector2d(fd, 0)) -
                  resid(u - Eigen::Vector2d(fd, 0))) /
                 (2.0 * fd);
    jac.col(1) = (resid(u + Eigen::Vector2d(0, fd)) -
                  resid(u - Eigen::Vector2d(0, fd))) /
                 (2.0 * fd);
    if (std::abs(jac.determinant()) < 1e-14 * cn2) {
      throw NoDescent("locate_intersection: singular Newton system",
                      {u.x(), u.y()}, 0.0);
    }
    u -= jac.inverse() * resid(u);
    if (!region.contains({u.x(), u.y()})) {
      std::ostringstream os;
      os << "locate_intersection: Newton left the region at (" << u.x() << ", "
         << u.y() << ")";
      throw LeftRegion(os.str(), {u.x(), u.y()});
    }
  }
  throw MaxSteps("locate_intersection: Newton did not converge");
}

// ---------------------------------------------------------------------------
// structural stability probe
// ---------------------------------------------------------------------------

struct StabilityTrial {
  bool relocated = false;
  double displacement = 0.0;
  double abs_det = 0.0;
  std::string error;
};

struct StabilityReport {
  double delta = 0.0;
  int trials = 0;
  int n_relocated = 0;
  double max_displacement = 0.0;
  double min_abs_det = std::numeric_limits<double>::infinity();
  std::vector<StabilityTrial> per_trial;
};

struct StabilityOptions {
  double search_radius = 0.25;
  uint64_t seed = 1;
  int threads = 1;
  LocateOptions locate;
};

// Perturbs (H0, H1, H2) by independent random symmetric matrices of spectral
// norm delta and relocates the intersection from the unperturbed point.
// Per-trial locator failures are recorded, not fatal.
inline StabilityReport stability_probe(const OperatorTriple& model,
                                       const Intersection& ic, double delta,
                                       int trials,
                                       const StabilityOptions& opt = {}) {
  if (trials < 1 || delta < 0)
    throw ValidationError("stability_probe: bad trials/delta");
  StabilityReport rep;
  rep.delta = delta;
  rep.trials = trials;
  rep.per_trial.resize(static_cast<size_t>(trials));
  const Region search = Region::disc(ic.point, opt.search_radius);
  detail::parallel_for(static_cast<size_t>(trials), opt.threads, [&](size_t t) {
    std::mt19937_64 rng(opt.seed + 0x9e3779b97f4a7c15ULL * (t + 1));
    auto perturb = [&](const Eigen::MatrixXd& h) {
      if (delta == 0.0) return h;
      return (h + random_symmetric(model.dim(), delta, rng)).eval();
    };
    StabilityTrial& trial = rep.per_trial[t];
    try {
      const Eigen::MatrixXd h0 = perturb(model.h0());
      const Eigen::MatrixXd h1 = perturb(model.h1());
      const Eigen::MatrixXd h2 = perturb(model.h2());
      OperatorTriple pert(h0, h1, h2);
      const Intersection relocated =
          locate_intersection(pert, ic.pair, ic.point, search, opt.locate);
      trial.relocated = true;
      trial.displacement = distance(relocated.point, ic.point);
      trial.abs_det = relocated.conicity.abs_det();
    } catch (const Error& e) {
      trial.relocated = false;
      trial.error = e.what();
    }
  });
  for (const auto& t : rep.per_trial) {
    if (t.relocated) {
      ++rep.n_relocated;
      rep.max_displacement = std::max(rep.max_displacement, t.displacement);
      rep.min_abs_det = std::min(rep.min_abs_det, t.abs_det);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline nlohmann::json intersection_to_json(const Intersection& ic) {
  nlohmann::json j;
  j["schema"] = kIntersectionSchema;
  j["point"] = {{"u1", ic.point.u1}, {"u2", ic.point.u2}};
  j["band"] = {ic.pair.lo, ic.pair.hi};
  j["det_M"] = ic.conicity.det();
  j["cone_constant"] = ic.cone_constant;
  j["degeneracy_gap"] = ic.degeneracy_gap;
  j["branch"] = ic.branch;
  std::vector<double> b0(ic.limit_basis.rows()), b1(ic.limit_basis.rows());
  for (Eigen::Index i = 0; i < ic.limit_basis.rows(); ++i) {
    b0[static_cast<size_t>(i)] = ic.limit_basis(i, 0);
    b1[static_cast<size_t>(i)] = ic.limit_basis(i, 1);
  }
  j["limit_basis"] = {b0, b1};
  nlohmann::json m = nlohmann::json::array();
  for (int r = 0; r < 2; ++r)
    m.push_back({ic.conicity.m(r, 0), ic.conicity.m(r, 1)});
  j["conicity"] = m;
  return j;
}

inline Intersection intersection_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kIntersectionSchema)
    throw ParseError("intersection: unsupported schema");
  Intersection ic;
  ic.point = {j.at("point").at("u1").get<double>(),
              j.at("point").at("u2").get<double>()};
  ic.pair = {j.at("band").at(0).get<int>(), j.at("band").at(1).get<int>()};
  ic.cone_constant = j.at("cone_constant").get<double>();
  ic.degeneracy_gap = j.value("degeneracy_gap", 0.0);
  ic.branch = j.value("branch", 1);
  const auto b0 = j.at("limit_basis").at(0).get<std::vector<double>>();
  const auto b1 = j.at("limit_basis").at(1).get<std::vector<double>>();
  ic.limit_basis.resize(static_cast<Eigen::Index>(b0.size()), 2);
  for (size_t i = 0; i < b0.size(); ++i) {
    ic.limit_basis(static_cast<Eigen::Index>(i), 0) = b0[i];
    ic.limit_basis(static_cast<Eigen::Index>(i), 1) = b1[i];
  }
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      ic.conicity.m(r, c) = j.at("conicity").at(r).at(c).get<double>();
  return ic;
}

}  // namespace conic

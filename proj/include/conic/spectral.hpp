#pragma once

// Eigendecomposition with a deterministic sign convention, band/gap
// certification over control regions, spectral projectors and sign-continuous
// eigenvector tracking along sampled curves.

#include "conic/model.hpp"

#include <json.hpp>

#include <optional>
#include <thread>
#include <vector>

namespace conic {

inline constexpr const char* kBandSchema = "conic-climb/band/1";

// Contiguous range of eigenvalue indices, inclusive.
struct BandRange {
  int lo = 0;
  int hi = 0;
  int size() const { return hi - lo + 1; }
};

struct EigenSystem {
  ControlPoint at;
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // orthonormal columns, deterministic signs

  double gap(int i) const { return values(i + 1) - values(i); }
  double norm() const {
    return std::max(std::abs(values(0)), std::abs(values(values.size() - 1)));
  }
};

namespace detail {

// Sign convention: the largest-|component| entry of each eigenvector is
// positive, ties broken by lowest index.
inline void fix_signs(Eigen::MatrixXd& vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    Eigen::Index imax = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
      const double a = std::abs(vectors(r, c));
      if (a > best + 1e-300 && a > best) {
        best = a;
        imax = r;
      }
    }
    if (vectors(imax, c) < 0) vectors.col(c) *= -1.0;
  }
}

}  // namespace detail

inline EigenSystem eigensystem(const OperatorTriple& m, const ControlPoint& u) {
  const Eigen::MatrixXd h = assemble(m, u);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  if (m.dim() <= 3)
    es.computeDirect(h);
  else
    es.compute(h);
  if (es.info() != Eigen::Success || !es.eigenvalues().allFinite())
    throw Error("eigensystem: decomposition failed (non-finite entries)");
  EigenSystem out;
  out.at = u;
  out.values = es.eigenvalues();
  out.vectors = es.eigenvectors();
  detail::fix_signs(out.vectors);
  return out;
}

// ---------------------------------------------------------------------------
// band certification
// ---------------------------------------------------------------------------

// A certified separated band: gamma is a lower bound for the distance between
// the band eigenvalues and the rest of the spectrum over the whole region,
// obtained from a grid scan minus the Lipschitz safety margin
// (||H1|| + ||H2||) * h. When the band covers the whole spectrum the
// complement is empty and the certificate is flagged unbounded.
struct Band {
  BandRange range;
  Region region;
  double gamma = 0.0;
  bool unbounded = false;
  double grid_density = 0.0;
};

class GapNotCertified : public Error {
 public:
  GapNotCertified(const std::string& msg, ControlPoint worst, double margin)
      : Error(msg), worst_point(worst), certified_margin(margin) {}
  ControlPoint worst_point;
  double certified_margin;  // the (non-positive) bound that failed
};

namespace detail {

inline std::vector<ControlPoint> region_grid(const Region& region, double h) {
  const auto bb = region.bbox();
  std::vector<ControlPoint> pts;
  const double cover = h / std::sqrt(2.0) + 1e-12;
  const int nx = std::max(1, static_cast<int>(std::ceil((bb[2] - bb[0]) / h)));
  const int ny = std::max(1, static_cast<int>(std::ceil((bb[3] - bb[1]) / h)));
  for (int i = 0; i <= nx; ++i)
    for (int j = 0; j <= ny; ++j) {
      ControlPoint p{bb[0] + (bb[2] - bb[0]) * i / nx,
                     bb[1] + (bb[3] - bb[1]) * j / ny};
      if (region.distance_to(p) <= cover) pts.push_back(p);
    }
  return pts;
}

template <typename Fn>
inline void parallel_for(size_t n, int threads, Fn&& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || n < 2) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

inline Band certify_band(const OperatorTriple& m, BandRange range,
                         const Region& region, double grid_density,
                         int threads = 1) {
  if (range.lo < 0 || range.hi < range.lo || range.hi >= m.dim())
    throw ValidationError("certify_band: invalid band indices");
  if (grid_density < 2.0)
    throw ValidationError("certify_band: grid_density must be >= 2 per unit");
  Band band;
  band.range = range;
  band.region = region;
  band.grid_density = grid_density;
  if (range.lo == 0 && range.hi == m.dim() - 1) {
    band.unbounded = true;  // complement of the band is empty
    band.gamma = std::numeric_limits<double>::infinity();
    return band;
  }
  const double h = 1.0 / grid_density;
  const auto grid = detail::region_grid(region, h);
  std::vector<double> dist(grid.size());
  detail::parallel_for(grid.size(), threads, [&](size_t i) {
    const EigenSystem es = eigensystem(m, grid[i]);
    double d = std::numeric_limits<double>::infinity();
    if (range.lo > 0) d = std::min(d, es.values(range.lo) - es.values(range.lo - 1));
    if (range.hi + 1 < m.dim())
      d = std::min(d, es.values(range.hi + 1) - es.values(range.hi));
    dist[i] = d;
  });
  double worst = std::numeric_limits<double>::infinity();
  ControlPoint worst_pt{};
  for (size_t i = 0; i < grid.size(); ++i)
    if (dist[i] < worst) {
      worst = dist[i];
      worst_pt = grid[i];
    }
  const double margin = m.control_norm() * h;
  band.gamma = worst - margin;
  if (!(band.gamma > 0)) {
    std::ostringstream os;
    os << "certify_band: gap not certified; worst grid point (" << worst_pt.u1
       << ", " << worst_pt.u2 << ") has distance " << worst
       << ", Lipschitz margin " << margin;
    throw GapNotCertified(os.str(), worst_pt, band.gamma);
  }
  return band;
}

inline nlohmann::json band_to_json(const Band& b) {
  nlohmann::json j;
  j["schema"] = kBandSchema;
  j["indices"] = {{"lo", b.range.lo}, {"hi", b.range.hi}};
  if (b.region.kind == Region::Kind::Rect)
    j["region"] = {{"kind", "rect"},
                   {"x0", b.region.x0},
                   {"y0", b.region.y0},
                   {"x1", b.region.x1},
                   {"y1", b.region.y1}};
  else
    j["region"] = {{"kind", "disc"},
                   {"cx", b.region.center.u1},
                   {"cy", b.region.center.u2},
                   {"r", b.region.radius}};
  j["gamma"] = b.unbounded ? -1.0 : b.gamma;
  j["unbounded"] = b.unbounded;
  j["grid_density"] = b.grid_density;
  return j;
}

inline Band band_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kBandSchema)
    throw ParseError("band: unsupported schema");
  Band b;
  b.range.lo = j.at("indices").at("lo").get<int>();
  b.range.hi = j.at("indices").at("hi").get<int>();
  const auto& r = j.at("region");
  if (r.at("kind") == "rect")
    b.region = Region::rect(r.at("x0"), r.at("y0"), r.at("x1"), r.at("y1"));
  else
    b.region = Region::disc({r.at("cx").get<double>(), r.at("cy").get<double>()},
                            r.at("r").get<double>());
  b.unbounded = j.value("unbounded", false);
  b.gamma = b.unbounded ? std::numeric_limits<double>::infinity()
                        : j.at("gamma").get<double>();
  b.grid_density = j.value("grid_density", 0.0);
  return b;
}

// ---------------------------------------------------------------------------
// projectors
// ---------------------------------------------------------------------------

inline Eigen::MatrixXd projector(const EigenSystem& es, BandRange range) {
  if (range.lo < 0 || range.hi < range.lo || range.hi >= es.values.size())
    throw ValidationError("projector: invalid band indices");
  const auto block = es.vectors.middleCols(range.lo, range.size());
  return block * block.transpose();
}

// ---------------------------------------------------------------------------
// tracking
// ---------------------------------------------------------------------------

class DegenerateAlongCurve : public Error {
 public:
  DegenerateAlongCurve(const std::string& msg, int index, double param)
      : Error(msg), index(index), param(param) {}
  int index;
  double param;
};

class TrackingLost : public Error {
 public:
  TrackingLost(const std::string& msg, double param, double overlap)
      : Error(msg), param(param), overlap(overlap) {}
  double param;
  double overlap;
};

struct TrackOptions {
  double simple_tol_rel = 1e-8;  // of ||H|| at the sample
  double overlap_min = 0.9;
};

// Eigensystem at one curve sample with tracked band columns sign-aligned to
// the previous frame; `sign` records the flip applied relative to the
// deterministic convention of eigensystem().
struct TrackedFrame {
  double param = 0.0;
  EigenSystem sys;
  Eigen::VectorXd sign;  // one entry per tracked index, +-1
};

inline std::vector<TrackedFrame> track_along(const OperatorTriple& m,
                                             const std::vector<double>& params,
                                             const std::vector<ControlPoint>& pts,
                                             BandRange range,
                                             const TrackOptions& opt = {}) {
  if (params.size() != pts.size() || pts.empty())
    throw ValidationError("track_along: bad sample arrays");
  std::vector<TrackedFrame> out;
  out.reserve(pts.size());
  for (size_t k = 0; k < pts.size(); ++k) {
    TrackedFrame f;
    f.param = params[k];
    f.sys = eigensystem(m, pts[k]);
    f.sign = Eigen::VectorXd::Ones(range.size());
    const double tol = opt.simple_tol_rel * std::max(f.sys.norm(), 1e-300);
    for (int i = range.lo; i <= range.hi; ++i) {
      const double below = i > 0 ? f.sys.gap(i - 1) : std::numeric_limits<double>::infinity();
      const double above = i + 1 < m.dim() ? f.sys.gap(i) : std::numeric_limits<double>::infinity();
      if (std::min(below, above) <= tol) {
        std::ostringstream os;
        os << "track_along: eigenvalue " << i << " degenerate at parameter "
           << params[k];
        throw DegenerateAlongCurve(os.str(), i, params[k]);
      }
    }
    if (!out.empty()) {
      const auto& prev = out.back();
      for (int i = range.lo; i <= range.hi; ++i) {
        const double ov = prev.sys.vectors.col(i).dot(f.sys.vectors.col(i));
        if (std::abs(ov) <= opt.overlap_min) {
          std::ostringstream os;
          os << "track_along: tracking lost for eigenvector " << i
             << " at parameter " << params[k] << " (overlap " << std::abs(ov)
             << ")";
          throw TrackingLost(os.str(), params[k], std::abs(ov));
        }
        if (ov < 0) {
          f.sys.vectors.col(i) *= -1.0;
          f.sign(i - range.lo) = -1.0;
        }
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace conic

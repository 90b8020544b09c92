#include <catch2/catch_amalgamated.hpp>

#include "conic/spectral.hpp"

#include <random>

using namespace conic;
using Catch::Approx;

namespace {

OperatorTriple random_model(int dim, std::mt19937_64& rng) {
  return OperatorTriple(random_symmetric(dim, 1.0, rng),
                        random_symmetric(dim, 1.0, rng),
                        random_symmetric(dim, 1.0, rng));
}

}  // namespace

TEST_CASE("eigensystem basic values") {
  auto pauli = builtin("pauli2");

  SECTION("pauli2 at (0.3, 0.4) has values +-|u|") {
    auto es = eigensystem(pauli, {0.3, 0.4});
    REQUIRE(es.values(0) == Approx(-0.5).margin(1e-12));
    REQUIRE(es.values(1) == Approx(0.5).margin(1e-12));
  }

  SECTION("pauli2 at the origin: zero matrix, orthonormal pair") {
    auto es = eigensystem(pauli, {0.0, 0.0});
    REQUIRE(es.values.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((es.vectors.transpose() * es.vectors -
             Eigen::Matrix2d::Identity())
                .cwiseAbs()
                .maxCoeff() <= 1e-12);
  }

  SECTION("free galerkin spectrum is 1, 4, 9, ...") {
    auto g = build_galerkin(4, {}, {}, {}, 16);
    auto es = eigensystem(g, {0.0, 0.0});
    for (int k = 0; k < 4; ++k)
      REQUIRE(es.values(k) == Approx((k + 1.0) * (k + 1.0)).margin(1e-12));
  }
}

TEST_CASE("eigensystem invariants on random models") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = random_model(6, rng);
    ControlPoint u{unif(rng), unif(rng)};
    auto es = eigensystem(m, u);
    const Eigen::MatrixXd h = assemble(m, u);
    const double hnorm = std::max(symmetric_norm(h), 1e-300);
    for (int i = 0; i < 6; ++i) {
      REQUIRE((i == 0 || es.values(i) >= es.values(i - 1)));
      const double resid =
          (h * es.vectors.col(i) - es.values(i) * es.vectors.col(i)).norm();
      REQUIRE(resid <= 1e-10 * (1.0 + std::abs(es.values(i))) * hnorm);
    }
    REQUIRE((es.vectors.transpose() * es.vectors -
             Eigen::MatrixXd::Identity(6, 6))
                .cwiseAbs()
                .maxCoeff() <= 1e-10);
  }
}

TEST_CASE("eigensystem is deterministic") {
  auto m = builtin("three_level");
  auto a = eigensystem(m, {0.7, -0.2});
  auto b = eigensystem(m, {0.7, -0.2});
  REQUIRE((a.vectors - b.vectors).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  // sign convention: largest-|component| entry positive
  for (int c = 0; c < 3; ++c) {
    Eigen::Index imax;
    a.vectors.col(c).cwiseAbs().maxCoeff(&imax);
    REQUIRE(a.vectors(imax, c) > 0.0);
  }
}

TEST_CASE("certify_band") {
  SECTION("whole spectrum is trivially separated (unbounded)") {
    auto band = certify_band(builtin("pauli2"), {0, 1},
                             Region::rect(-1, -1, 1, 1), 4.0);
    REQUIRE(band.unbounded);
    REQUIRE(std::isinf(band.gamma));
  }

  auto m = builtin("three_level");

  SECTION("band {0,1} certified on a disc around its own intersection") {
    const auto region = Region::disc({0.0, 0.0}, 0.4);
    auto band = certify_band(m, {0, 1}, region, 40.0);
    REQUIRE(band.gamma > 0.0);
    // oracle: independent fine scan of the distance from l2 to the band
    double oracle = std::numeric_limits<double>::infinity();
    for (int i = -30; i <= 30; ++i)
      for (int j = -30; j <= 30; ++j) {
        ControlPoint p{0.4 * i / 30.0, 0.4 * j / 30.0};
        if (region.contains(p)) {
          auto es = eigensystem(m, p);
          oracle = std::min(oracle, es.values(2) - es.values(1));
        }
      }
    REQUIRE(band.gamma <= oracle);  // certificate must not overclaim
    REQUIRE(band.gamma >= 0.5 * oracle);
  }

  SECTION("disc containing the (l1,l2) intersection is rejected") {
    REQUIRE_THROWS_AS(
        certify_band(m, {0, 1}, Region::disc({2.0, 0.0}, 0.3), 40.0),
        GapNotCertified);
  }

  SECTION("rejection reports the worst grid point near the crossing") {
    try {
      certify_band(m, {1, 2}, Region::disc({0.0, 0.0}, 0.3), 40.0);
      FAIL("expected GapNotCertified");
    } catch (const GapNotCertified& e) {
      REQUIRE(distance(e.worst_point, {0.0, 0.0}) <= 0.1);
      REQUIRE(e.certified_margin <= 0.0);
    }
  }

  SECTION("parallel scan agrees with serial") {
    auto serial =
        certify_band(m, {0, 1}, Region::disc({0.0, 0.0}, 0.4), 24.0, 1);
    auto par = certify_band(m, {0, 1}, Region::disc({0.0, 0.0}, 0.4), 24.0, 4);
    REQUIRE(serial.gamma == par.gamma);
  }
}

TEST_CASE("projector") {
  auto pauli = builtin("pauli2");

  SECTION("full band gives the identity") {
    auto es = eigensystem(pauli, {0.4, 0.1});
    REQUIRE((projector(es, {0, 1}) - Eigen::Matrix2d::Identity())
                .cwiseAbs()
                .maxCoeff() <= 1e-12);
  }

  SECTION("ground projector of sigma_z at (1,0) is diag(0,1)") {
    auto es = eigensystem(pauli, {1.0, 0.0});
    Eigen::Matrix2d expect;
    expect << 0, 0, 0, 1;
    REQUIRE((projector(es, {0, 0}) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SECTION("idempotent, symmetric, correct trace") {
    std::mt19937_64 rng(5);
    auto m = random_model(7, rng);
    auto es = eigensystem(m, {0.3, -0.8});
    const Eigen::MatrixXd p = projector(es, {2, 4});
    REQUIRE((p * p - p).cwiseAbs().maxCoeff() <= 1e-10);
    REQUIRE((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    REQUIRE(p.trace() == Approx(3.0).margin(1e-10));
  }
}

TEST_CASE("track_along") {
  auto pauli = builtin("pauli2");

  SECTION("quarter circle keeps overlaps above 0.99") {
    std::vector<double> params;
    std::vector<ControlPoint> pts;
    for (int k = 0; k < 100; ++k) {
      const double s = (M_PI / 2.0) * k / 99.0;
      params.push_back(s);
      pts.push_back({std::cos(s), std::sin(s)});
    }
    auto frames = track_along(pauli, params, pts, {0, 1});
    REQUIRE(frames.size() == 100);
    for (size_t k = 1; k < frames.size(); ++k)
      for (int i = 0; i < 2; ++i) {
        const double ov = frames[k - 1].sys.vectors.col(i).dot(
            frames[k].sys.vectors.col(i));
        REQUIRE(ov > 0.99);
      }
  }

  SECTION("curve through the origin is degenerate") {
    std::vector<double> params{0.0, 0.5, 1.0};
    std::vector<ControlPoint> pts{{-0.5, 0.0}, {0.0, 0.0}, {0.5, 0.0}};
    REQUIRE_THROWS_AS(track_along(pauli, params, pts, {0, 1}),
                      DegenerateAlongCurve);
  }

  SECTION("constant curve gives identical frames") {
    std::vector<double> params{0.0, 1.0, 2.0};
    std::vector<ControlPoint> pts(3, ControlPoint{0.6, 0.2});
    auto frames = track_along(pauli, params, pts, {0, 1});
    for (const auto& f : frames)
      REQUIRE((f.sys.vectors - frames[0].sys.vectors).cwiseAbs().maxCoeff() ==
              0.0);
  }

  SECTION("coarse sampling through a near-crossing loses tracking") {
    // jump across the origin in one step: eigenvectors swap roles
    std::vector<double> params{0.0, 1.0};
    std::vector<ControlPoint> pts{{0.5, 0.02}, {-0.5, 0.02}};
    REQUIRE_THROWS_AS(track_along(pauli, params, pts, {0, 1}), TrackingLost);
  }
}

TEST_CASE("eigenvalue Lipschitz bound from the derivative formula") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unif(-1.5, 1.5);
  std::uniform_real_distribution<double> step(-0.05, 0.05);
  int checked = 0;
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_model(5, rng);
    const double lip = m.control_norm();
    for (int k = 0; k < 200; ++k) {
      ControlPoint u{unif(rng), unif(rng)};
      ControlPoint v{u.u1 + step(rng), u.u2 + step(rng)};
      auto eu = eigensystem(m, u);
      auto ev = eigensystem(m, v);
      for (int l = 0; l < 5; ++l) {
        REQUIRE(std::abs(ev.values(l) - eu.values(l)) <=
                lip * distance(u, v) + 1e-9);
      }
      ++checked;
    }
  }
  REQUIRE(checked == 1000);
}

TEST_CASE("off-diagonal identity converges at first order") {
  // (l_m - l_l) <phi_l, dphi_m/dt> = <phi_l, (du1 H1 + du2 H2) phi_m>
  // with dphi/dt replaced by centered differences; residual should vanish
  // at order >= 0.9 under step halving.
  std::mt19937_64 rng(13);
  auto m = random_model(4, rng);
  auto curve = [](double t) {
    return ControlPoint{0.8 + 0.3 * std::sin(t), -0.2 + 0.4 * t};
  };
  auto curve_dot = [](double t) {
    return Eigen::Vector2d{0.3 * std::cos(t), 0.4};
  };

  auto residual = [&](double h) {
    const double t = 0.35;
    std::vector<double> params{t - h, t, t + h};
    std::vector<ControlPoint> pts{curve(t - h), curve(t), curve(t + h)};
    auto frames = track_along(m, params, pts, {0, 3});
    double worst = 0.0;
    const auto& mid = frames[1].sys;
    const Eigen::Vector2d du = curve_dot(t);
    const Eigen::MatrixXd hdot = du(0) * m.h1() + du(1) * m.h2();
    for (int l = 0; l < 4; ++l)
      for (int mm = 0; mm < 4; ++mm) {
        if (l == mm) continue;
        const Eigen::VectorXd dphi =
            (frames[2].sys.vectors.col(mm) - frames[0].sys.vectors.col(mm)) /
            (2.0 * h);
        const double lhs =
            (mid.values(mm) - mid.values(l)) * mid.vectors.col(l).dot(dphi);
        const double rhs = mid.vectors.col(l).dot(hdot * mid.vectors.col(mm));
        worst = std::max(worst, std::abs(lhs - rhs));
      }
    return worst;
  };

  const double r1 = residual(1e-3);
  const double r2 = residual(5e-4);
  REQUIRE(r1 < 1e-4);
  const double order = std::log2(r1 / r2);
  REQUIRE(order >= 0.9);
}

TEST_CASE("projector smoothness constant stays bounded under refinement") {
  auto m = builtin("three_level");
  const ControlPoint base{0.9, 0.5};  // away from both intersections
  auto estimate = [&](double h) {
    double c = 0.0;
    for (int k = 0; k < 16; ++k) {
      const double a = 2.0 * M_PI * k / 16.0;
      ControlPoint u{base.u1 + h * std::cos(a), base.u2 + h * std::sin(a)};
      const Eigen::MatrixXd p0 = projector(eigensystem(m, base), {0, 1});
      const Eigen::MatrixXd p1 = projector(eigensystem(m, u), {0, 1});
      c = std::max(c, symmetric_norm(p1 - p0) / h);
    }
    return c;
  };
  const double c1 = estimate(1e-2);
  const double c2 = estimate(5e-3);
  const double c3 = estimate(2.5e-3);
  REQUIRE(std::isfinite(c1));
  REQUIRE(c2 <= 2.0 * c1);
  REQUIRE(c3 <= 1.5 * c2);
}

TEST_CASE("band certificates serialize") {
  auto m = builtin("three_level");
  auto band = certify_band(m, {0, 1}, Region::disc({0.0, 0.0}, 0.4), 24.0);
  auto j = band_to_json(band);
  auto back = band_from_json(j);
  REQUIRE(back.range.lo == 0);
  REQUIRE(back.range.hi == 1);
  REQUIRE(back.gamma == band.gamma);
  REQUIRE(back.region.kind == Region::Kind::Disc);
  REQUIRE(back.region.radius == 0.4);
}

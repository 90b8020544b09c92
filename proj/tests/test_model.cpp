#include <catch2/catch_amalgamated.hpp>

#include "conic/model.hpp"

#include <cstdio>
#include <random>

using namespace conic;
using Catch::Approx;

namespace {

// 10^6-panel trapezoid quadrature of <chi_j, f chi_k> on [0, pi]; independent
// oracle for the Simpson-based Galerkin assembly.
double trapezoid_element(int j, int k, const std::function<double(double)>& f) {
  const int n = 1'000'000;
  const double h = M_PI / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * std::sin(j * x) * f(x) * std::sin(k * x);
  }
  return 2.0 / M_PI * acc * h;
}

std::string temp_path(const char* stem) {
  return std::string("conic_test_") + stem + ".json";
}

}  // namespace

TEST_CASE("assemble is the exact linear combination") {
  auto pauli = builtin("pauli2");

  SECTION("zero controls return h0 exactly") {
    const Eigen::MatrixXd h = assemble(pauli, {0.0, 0.0});
    REQUIRE(h.isApprox(pauli.h0(), 0.0));
  }

  SECTION("pauli model at (0.3, 0.4)") {
    Eigen::Matrix2d expect;
    expect << 0.3, 0.4, 0.4, -0.3;
    const Eigen::MatrixXd h = assemble(pauli, {0.3, 0.4});
    REQUIRE((h - expect).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("galerkin model at (1, 1) equals entrywise sum") {
    auto g = builtin("galerkin_demo");
    const Eigen::MatrixXd h = assemble(g, {1.0, 1.0});
    const Eigen::MatrixXd expect = g.h0() + g.h1() + g.h2();
    REQUIRE((h - expect).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("assemble is affine in u") {
  auto m = builtin("three_level");
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> grid(-64, 64);
  for (int trial = 0; trial < 50; ++trial) {
    // dyadic rationals keep u+v exact, so the identity holds bitwise
    ControlPoint u{grid(rng) / 64.0, grid(rng) / 64.0};
    ControlPoint v{grid(rng) / 64.0, grid(rng) / 64.0};
    const Eigen::MatrixXd lhs =
        assemble(m, {u.u1 + v.u1, u.u2 + v.u2}) - assemble(m, u) -
        assemble(m, v) + assemble(m, {0.0, 0.0});
    REQUIRE(lhs.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("model validation") {
  Eigen::Matrix2d sym = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d bad;
  bad << 0, 1, 0, 0;

  REQUIRE_THROWS_AS(OperatorTriple(sym, bad, sym), ValidationError);
  REQUIRE_THROWS_AS(OperatorTriple(Eigen::MatrixXd::Identity(1, 1),
                                   Eigen::MatrixXd::Identity(1, 1),
                                   Eigen::MatrixXd::Identity(1, 1)),
                    ValidationError);
  REQUIRE_THROWS_WITH(OperatorTriple(sym, sym, bad),
                      Catch::Matchers::ContainsSubstring("h2"));
}

TEST_CASE("model JSON round trip") {
  auto m = builtin("three_level");
  const std::string path = temp_path("roundtrip");
  save_model(m, path);
  auto back = load_model(path);
  REQUIRE(back.dim() == m.dim());
  REQUIRE((back.h0() - m.h0()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.h1() - m.h1()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.h2() - m.h2()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.metadata().name == "three_level");
  REQUIRE(back.metadata().known_intersections.size() == 2);
  std::remove(path.c_str());

  // round trip survives entries that do not print exactly in short form
  auto g = builtin("galerkin_demo");
  save_model(g, path);
  auto gb = load_model(path);
  REQUIRE((gb.h1() - g.h1()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((gb.h2() - g.h2()).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("model JSON validation errors") {
  auto j = model_to_json(builtin("pauli2"));

  SECTION("non-symmetric h1 names the field") {
    j["h1"] = std::vector<double>{0, 1, 0, 0};
    REQUIRE_THROWS_WITH(model_from_json(j),
                        Catch::Matchers::ContainsSubstring("h1"));
  }

  SECTION("truncated array reports expected length") {
    j["h2"] = std::vector<double>{0, 1, 1};
    REQUIRE_THROWS_WITH(model_from_json(j),
                        Catch::Matchers::ContainsSubstring("dim^2 = 4"));
  }

  SECTION("wrong schema rejected") {
    j["schema"] = "conic-climb/model/999";
    REQUIRE_THROWS_AS(model_from_json(j), ParseError);
  }
}

TEST_CASE("galerkin free Laplacian") {
  auto m = build_galerkin(4, SampledPotential::zero(), SampledPotential::zero(),
                          SampledPotential::zero(), 16);
  Eigen::VectorXd diag(4);
  diag << 1, 4, 9, 16;
  REQUIRE((m.h0() - Eigen::MatrixXd(diag.asDiagonal())).cwiseAbs().maxCoeff() ==
          0.0);
  REQUIRE(m.h1().cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(m.h2().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("galerkin constant potential gives identity") {
  auto one = SampledPotential::from_function([](double) { return 1.0; }, 65);
  auto m = build_galerkin(3, SampledPotential::zero(), one,
                          SampledPotential::zero(), 128);
  REQUIRE((m.h1() - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <=
          1e-10);
}

TEST_CASE("galerkin cos potential matches trapezoid oracle") {
  auto cosx = SampledPotential::from_function(
      [](double x) { return std::cos(x); }, 4097);
  auto m = build_galerkin(2, SampledPotential::zero(), cosx,
                          SampledPotential::zero(), 256);
  const double oracle =
      trapezoid_element(1, 2, [](double x) { return std::cos(x); });
  REQUIRE(oracle == Approx(0.5).margin(1e-9));  // analytic value is 1/2
  REQUIRE(m.h1()(0, 1) == Approx(oracle).margin(1e-6));
}

TEST_CASE("galerkin quadrature refinement converges") {
  auto v = SampledPotential::from_function(
      [](double x) { return std::sin(x) + 0.3 * std::cos(3 * x); }, 8193);
  auto coarse = build_galerkin(5, v, v, v, 512);
  auto fine = build_galerkin(5, v, v, v, 1024);
  REQUIRE((coarse.h0() - fine.h0()).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((coarse.h1() - fine.h1()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("galerkin preconditions") {
  REQUIRE_THROWS_AS(build_galerkin(1, {}, {}, {}, 64), ValidationError);
  REQUIRE_THROWS_AS(build_galerkin(4, {}, {}, {}, 8), ValidationError);
  SampledPotential bad;
  bad.values = {1.0};
  REQUIRE_THROWS_AS(build_galerkin(4, bad, {}, {}, 64), ValidationError);
}

TEST_CASE("builtin models") {
  auto p = builtin("pauli2");
  REQUIRE(p.dim() == 2);
  Eigen::Matrix2d sz;
  sz << 1, 0, 0, -1;
  REQUIRE((p.h1() - sz).cwiseAbs().maxCoeff() == 0.0);

  REQUIRE(builtin("three_level").dim() == 3);
  REQUIRE(builtin("galerkin_demo").dim() == 8);

  REQUIRE_THROWS_WITH(builtin("unknown"),
                      Catch::Matchers::ContainsSubstring("pauli2") &&
                          Catch::Matchers::ContainsSubstring("three_level") &&
                          Catch::Matchers::ContainsSubstring("galerkin_demo"));
}

TEST_CASE("assemble stays symmetric for random controls") {
  auto m = builtin("galerkin_demo");
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    const Eigen::MatrixXd h = assemble(m, {unif(rng), unif(rng)});
    REQUIRE((h - h.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

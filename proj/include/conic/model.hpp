#pragma once

// Hamiltonian families H(u) = H0 + u1*H1 + u2*H2 on a finite-dimensional real
// basis: construction, validation, Galerkin assembly from sampled potentials,
// JSON (de)serialization and the built-in reference models.

#include "conic/common.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <sstream>
#include <utility>
#include <vector>

namespace conic {

inline constexpr const char* kModelSchema = "conic-climb/model/1";

struct KnownIntersection {
  ControlPoint point;  // approximate location, used to seed the locator
  int lower = 0;       // index j of the intersecting pair (j, j+1)
};

struct ModelMetadata {
  std::string name;
  std::string description;
  std::vector<KnownIntersection> known_intersections;
};

// The three real symmetric operators defining the control family.
// Immutable after construction; safe to share between threads.
class OperatorTriple {
 public:
  OperatorTriple(Eigen::MatrixXd h0, Eigen::MatrixXd h1, Eigen::MatrixXd h2,
                 ModelMetadata meta = {})
      : h0_(std::move(h0)),
        h1_(std::move(h1)),
        h2_(std::move(h2)),
        meta_(std::move(meta)) {
    const auto n = h0_.rows();
    if (n < 2) throw ValidationError("model: dim must be >= 2");
    auto check = [&](const Eigen::MatrixXd& m, const char* name) {
      if (m.rows() != n || m.cols() != n)
        throw ValidationError(std::string("model: ") + name +
                              " has mismatched dimensions");
      if (!is_symmetric(m, 1e-12))
        throw ValidationError(std::string("model: ") + name +
                              " is not symmetric (tol 1e-12)");
    };
    check(h0_, "h0");
    check(h1_, "h1");
    check(h2_, "h2");
    control_norm_ = symmetric_norm(h1_) + symmetric_norm(h2_);
  }

  int dim() const { return static_cast<int>(h0_.rows()); }
  const Eigen::MatrixXd& h0() const { return h0_; }
  const Eigen::MatrixXd& h1() const { return h1_; }
  const Eigen::MatrixXd& h2() const { return h2_; }
  const ModelMetadata& metadata() const { return meta_; }

  // ||H1||_2 + ||H2||_2 : Lipschitz constant of the eigenvalues in u.
  double control_norm() const { return control_norm_; }

 private:
  Eigen::MatrixXd h0_, h1_, h2_;
  ModelMetadata meta_;
  double control_norm_ = 0.0;
};

inline Eigen::MatrixXd assemble(const OperatorTriple& m,
                                const ControlPoint& u) {
  if (!u.finite()) throw ValidationError("assemble: non-finite control point");
  return m.h0() + u.u1 * m.h1() + u.u2 * m.h2();
}

// ---------------------------------------------------------------------------
// JSON model files
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> matrix_to_flat(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out[static_cast<size_t>(i * m.cols() + j)] = m(i, j);
  return out;
}

inline Eigen::MatrixXd flat_to_matrix(const std::vector<double>& v, int dim,
                                      const char* field) {
  if (v.size() != static_cast<size_t>(dim) * static_cast<size_t>(dim)) {
    std::ostringstream os;
    os << "model: field '" << field << "' has " << v.size()
       << " entries, expected dim^2 = " << dim * dim;
    throw ParseError(os.str());
  }
  Eigen::MatrixXd m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = v[static_cast<size_t>(i * dim + j)];
  return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const OperatorTriple& m) {
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["dim"] = m.dim();
  j["h0"] = detail::matrix_to_flat(m.h0());
  j["h1"] = detail::matrix_to_flat(m.h1());
  j["h2"] = detail::matrix_to_flat(m.h2());
  const auto& meta = m.metadata();
  if (!meta.name.empty() || !meta.description.empty() ||
      !meta.known_intersections.empty()) {
    nlohmann::json jm;
    if (!meta.name.empty()) jm["name"] = meta.name;
    if (!meta.description.empty()) jm["description"] = meta.description;
    if (!meta.known_intersections.empty()) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& k : meta.known_intersections)
        arr.push_back({{"u1", k.point.u1}, {"u2", k.point.u2}, {"lower", k.lower}});
      jm["known_intersections"] = arr;
    }
    j["metadata"] = jm;
  }
  return j;
}

inline OperatorTriple model_from_json(const nlohmann::json& j) {
  auto need = [&](const char* field) -> const nlohmann::json& {
    auto it = j.find(field);
    if (it == j.end())
      throw ParseError(std::string("model: missing field '") + field + "'");
    return *it;
  };
  const std::string schema = need("schema").get<std::string>();
  if (schema != kModelSchema)
    throw ParseError("model: unsupported schema '" + schema + "', expected '" +
                     kModelSchema + "'");
  const int dim = need("dim").get<int>();
  if (dim < 2) throw ParseError("model: dim must be >= 2");
  auto mat = [&](const char* field) {
    const auto& arr = need(field);
    if (!arr.is_array())
      throw ParseError(std::string("model: field '") + field +
                       "' must be an array");
    return detail::flat_to_matrix(arr.get<std::vector<double>>(), dim, field);
  };
  const Eigen::MatrixXd h0 = mat("h0");
  const Eigen::MatrixXd h1 = mat("h1");
  const Eigen::MatrixXd h2 = mat("h2");
  auto sym = [&](const Eigen::MatrixXd& m, const char* name) {
    if (!is_symmetric(m, 1e-12))
      throw ParseError(std::string("model: field '") + name +
                       "' is not symmetric");
  };
  sym(h0, "h0");
  sym(h1, "h1");
  sym(h2, "h2");
  ModelMetadata meta;
  if (j.contains("metadata")) {
    const auto& jm = j["metadata"];
    meta.name = jm.value("name", "");
    meta.description = jm.value("description", "");
    if (jm.contains("known_intersections"))
      for (const auto& k : jm["known_intersections"])
        meta.known_intersections.push_back(
            {{k.at("u1").get<double>(), k.at("u2").get<double>()},
             k.at("lower").get<int>()});
  }
  return OperatorTriple(h0, h1, h2, std::move(meta));
}

inline void save_model(const OperatorTriple& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_model: cannot open '" + path + "' for writing");
  out << model_to_json(m).dump(2) << "\n";
}

inline OperatorTriple load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_model: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("load_model: '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

// ---------------------------------------------------------------------------
// Galerkin assembly on [0, pi] with Dirichlet sine basis
// ---------------------------------------------------------------------------

// A real potential given by uniform samples on [0, pi], endpoints included.
// Evaluation between nodes is linear interpolation.
struct SampledPotential {
  std::vector<double> values;

  static SampledPotential zero() { return {}; }

  static SampledPotential from_function(const std::function<double(double)>& f,
                                        int n_samples) {
    if (n_samples < 2)
      throw ValidationError("potential: need at least 2 samples");
    SampledPotential p;
    p.values.resize(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i)
      p.values[static_cast<size_t>(i)] = f(M_PI * i / (n_samples - 1));
    return p;
  }

  bool empty() const { return values.empty(); }

  double operator()(double x) const {
    if (values.empty()) return 0.0;
    if (values.size() == 1) return values[0];
    const double s = x / M_PI * (values.size() - 1);
    const auto i = std::min(static_cast<size_t>(std::max(0.0, s)),
                            values.size() - 2);
    const double w = std::min(std::max(s - static_cast<double>(i), 0.0), 1.0);
    return values[i] * (1.0 - w) + values[i + 1] * w;
  }
};

// Sine-basis truncation of -Laplacian + V0 + u1 V1 + u2 V2 on [0, pi]:
// chi_k(x) = sqrt(2/pi) sin(kx), (h0)_jk = j^2 delta_jk + <chi_j, V0 chi_k>,
// control matrices from V1, V2. Matrix elements by composite Simpson on
// `quad_points` panels; results symmetrized to remove quadrature asymmetry.
inline OperatorTriple build_galerkin(int n_modes, const SampledPotential& v0,
                                     const SampledPotential& v1,
                                     const SampledPotential& v2,
                                     int quad_points,
                                     ModelMetadata meta = {}) {
  if (n_modes < 2) throw ValidationError("galerkin: n_modes must be >= 2");
  if (quad_points < 4 * n_modes)
    throw ValidationError("galerkin: quad_points must be >= 4*n_modes");
  for (const auto* v : {&v0, &v1, &v2})
    if (!v->empty() && v->values.size() < 2)
      throw ValidationError("galerkin: invalid potential sampling grid");
  int n = quad_points;
  if (n % 2) ++n;  // Simpson needs an even panel count
  const double h = M_PI / n;

  auto matrix_of = [&](const SampledPotential& v) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_modes, n_modes);
    if (v.empty()) return m;
    const double c = 2.0 / M_PI;
    for (int j = 1; j <= n_modes; ++j)
      for (int k = 1; k <= n_modes; ++k) {
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
          const double x = i * h;
          const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
          acc += w * std::sin(j * x) * v(x) * std::sin(k * x);
        }
        m(j - 1, k - 1) = c * acc * h / 3.0;
      }
    return ((m + m.transpose()) / 2.0).eval();
  };

  Eigen::MatrixXd h0 = matrix_of(v0);
  for (int j = 1; j <= n_modes; ++j)
    h0(j - 1, j - 1) += static_cast<double>(j) * j;
  return OperatorTriple(h0, matrix_of(v1), matrix_of(v2), std::move(meta));
}

// ---------------------------------------------------------------------------
// built-in models
// ---------------------------------------------------------------------------

inline std::vector<std::string> builtin_names() {
  return {"pauli2", "three_level", "galerkin_demo"};
}

// "pauli2": H = u1 sigma_z + u2 sigma_x, conical intersection at the origin
// with gap 2|u|.
// "three_level": 3x3 family with conical intersections between (l0,l1) at
// (0,0) and between (l1,l2) at (2,0); a mirror (l1,l2) intersection exists at
// (-2,0).
// "galerkin_demo": 8-mode sine-basis truncation of the free Laplacian driven
// by V1 = cos(x), V2 = cos(2x).
inline OperatorTriple builtin(const std::string& name) {
  if (name == "pauli2") {
    Eigen::Matrix2d z = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d sz, sx;
    sz << 1, 0, 0, -1;
    sx << 0, 1, 1, 0;
    ModelMetadata meta;
    meta.name = "pauli2";
    meta.description = "two-level model u1*sigma_z + u2*sigma_x";
    meta.known_intersections = {{{0.0, 0.0}, 0}};
    return OperatorTriple(z, sz, sx, std::move(meta));
  }
  if (name == "three_level") {
    Eigen::Matrix3d h0, h1, h2;
    h0 << 0, 0, 0, 0, 0, 0, 0, 0, 2;
    h1 << 1, 0, 0, 0, -1, 0, 0, 0, 0;
    h2 << 0, 1, 0.5, 1, 0, 1, 0.5, 1, 0;
    ModelMetadata meta;
    meta.name = "three_level";
    meta.description =
        "three-level family with conical intersections (l0,l1) at (0,0) and "
        "(l1,l2) at (2,0)";
    meta.known_intersections = {{{0.0, 0.0}, 0}, {{2.0, 0.0}, 1}};
    return OperatorTriple(h0, h1, h2, std::move(meta));
  }
  if (name == "galerkin_demo") {
    const int n_samples = 1025;
    auto v1 = SampledPotential::from_function(
        [](double x) { return std::cos(x); }, n_samples);
    auto v2 = SampledPotential::from_function(
        [](double x) { return std::cos(2.0 * x); }, n_samples);
    ModelMetadata meta;
    meta.name = "galerkin_demo";
    meta.description =
        "8-mode Dirichlet sine truncation, V1 = cos(x), V2 = cos(2x)";
    return build_galerkin(8, SampledPotential::zero(), v1, v2, 64,
                          std::move(meta));
  }
  std::ostringstream os;
  os << "unknown builtin model '" << name << "'; available:";
  for (const auto& n : builtin_names()) os << " " << n;
  throw Error(os.str());
}

}  // namespace conic

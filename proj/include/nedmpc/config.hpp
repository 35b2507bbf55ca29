#pragma once

// JSON configuration and design files. The schema is documented in
// README.md.

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nedmpc/discretize.hpp"
#include "nedmpc/model.hpp"
#include "nedmpc/ocp.hpp"
#include "nedmpc/rci.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

using Json = nlohmann::json;

/// Malformed or invalid configuration; the message names the field.
class ConfigError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

struct SubsystemConfig {
  std::string name;
  Matrix A;
  Matrix B;
  Vector x_lo, x_hi;
  Vector u_lo, u_hi;
  Vector q_diag;
  Vector r_diag;
  Vector x0;
};

struct CouplingConfig {
  int i = 0;  // affected subsystem
  int j = 0;  // source subsystem
  Matrix A;
  Matrix B;
};

struct Config {
  std::string name = "unnamed";
  bool continuous = false;
  double ts = 0.0;
  Horizons horizons;
  int rci_h = 10;
  RciWeights weights;
  int steps = 300;
  unsigned seed = 1;
  qp::SolverSettings solver;
  double constraint_tol = 1e-9;
  std::vector<SubsystemConfig> subsystems;
  std::vector<CouplingConfig> couplings;

  /// Stacked initial state.
  Vector InitialState() const {
    Index n = 0;
    for (const auto& s : subsystems) n += s.x0.size();
    Vector x(n);
    Index off = 0;
    for (const auto& s : subsystems) {
      x.segment(off, s.x0.size()) = s.x0;
      off += s.x0.size();
    }
    return x;
  }
};

namespace internal {

inline Matrix MatrixFromJson(const Json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) {
    throw ConfigError(field + ": expected a nonempty array of rows");
  }
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array()) throw ConfigError(field + ": row " + std::to_string(r) + " is not an array");
    if (r == 0) cols = j[r].size();
    if (j[r].size() != cols) throw ConfigError(field + ": ragged rows");
  }
  Matrix M(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ConfigError(field + ": non-numeric entry");
      M(r, c) = j[r][c].get<double>();
    }
  }
  return M;
}

inline Vector VectorFromJson(const Json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field + ": expected a nonempty array");
  Vector v(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ConfigError(field + ": non-numeric entry");
    v(k) = j[k].get<double>();
  }
  return v;
}

inline Json ToJson(const Matrix& M) {
  Json out = Json::array();
  for (Index r = 0; r < M.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    out.push_back(row);
  }
  return out;
}

inline Json ToJson(const Vector& v) {
  Json out = Json::array();
  for (Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

inline const Json& Require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ConfigError(where + ": missing field '" + key + "'");
  }
  return j.at(key);
}

template <typename T>
T Number(const Json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field + ": expected a number");
  if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw ConfigError(field + ": expected an integer");
  }
  return j.get<T>();
}

template <typename T>
T NumberOr(const Json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? Number<T>(j.at(key), where + "." + key) : fallback;
}

}  // namespace internal

/// Checks the parts of a configuration that do not need the system built.
inline void ValidateConfig(const Config& c) {
  if (c.subsystems.empty()) throw ConfigError("subsystems: at least one is required");
  if (c.continuous && !(c.ts > 0.0)) throw ConfigError("Ts: must be positive");
  if (c.horizons.N < 1) throw ConfigError("horizons.N: must be at least 1");
  if (c.horizons.H < c.horizons.N + 1) {
    throw ConfigError("horizons.H: must be at least N + 1 (got H = " +
                      std::to_string(c.horizons.H) + ", N = " +
                      std::to_string(c.horizons.N) +
                      "); the planned disturbance must vanish inside the "
                      "ancillary horizon");
  }
  if (c.rci_h < 1) throw ConfigError("rci.h: must be positive");
  if (c.steps < 0) throw ConfigError("sim.steps: must be nonnegative");
  try {
    c.weights.Validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("rci: ") + e.what());
  }
  const int count = static_cast<int>(c.subsystems.size());
  for (int i = 0; i < count; ++i) {
    const SubsystemConfig& s = c.subsystems[i];
    const std::string at = "subsystems[" + std::to_string(i) + "]";
    const Index n = s.A.rows();
    if (s.A.cols() != n) throw ConfigError(at + ".A: must be square");
    if (s.B.rows() != n) throw ConfigError(at + ".B: row count must match A");
    if (s.x_lo.size() != n || s.x_hi.size() != n) throw ConfigError(at + ".x bounds: length");
    if (s.u_lo.size() != s.B.cols() || s.u_hi.size() != s.B.cols()) {
      throw ConfigError(at + ".u bounds: length");
    }
    if (s.q_diag.size() != n) throw ConfigError(at + ".Q_diag: length");
    if (s.r_diag.size() != s.B.cols()) throw ConfigError(at + ".R_diag: length");
    if (s.x0.size() != n) throw ConfigError(at + ".x0: length");
  }
  for (std::size_t k = 0; k < c.couplings.size(); ++k) {
    const CouplingConfig& cp = c.couplings[k];
    const std::string at = "couplings[" + std::to_string(k) + "]";
    if (cp.i < 0 || cp.i >= count || cp.j < 0 || cp.j >= count || cp.i == cp.j) {
      throw ConfigError(at + ": invalid subsystem pair");
    }
    const auto& si = c.subsystems[cp.i];
    const auto& sj = c.subsystems[cp.j];
    if (cp.A.rows() != si.A.rows() || cp.A.cols() != sj.A.rows()) {
      throw ConfigError(at + ".A: shape");
    }
    if (cp.B.rows() != si.A.rows() || cp.B.cols() != sj.B.cols()) {
      throw ConfigError(at + ".B: shape");
    }
  }
}

inline Config ParseConfig(const Json& j) {
  using namespace internal;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  Config c;
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ConfigError("name: expected a string");
    c.name = j["name"].get<std::string>();
  }
  const std::string domain =
      j.contains("time_domain") ? j["time_domain"].get<std::string>() : "discrete";
  if (domain != "continuous" && domain != "discrete") {
    throw ConfigError("time_domain: expected 'continuous' or 'discrete'");
  }
  c.continuous = domain == "continuous";
  c.ts = NumberOr<double>(j, "Ts", 0.0, "config");
  if (j.contains("horizons")) {
    const Json& h = j["horizons"];
    c.horizons.N = Number<int>(Require(h, "N", "horizons"), "horizons.N");
    c.horizons.H = NumberOr<int>(h, "H", c.horizons.N + 1, "horizons");
  }
  if (j.contains("rci")) {
    const Json& r = j["rci"];
    c.rci_h = NumberOr<int>(r, "h", c.rci_h, "rci");
    c.weights.q_eta = NumberOr<double>(r, "q_eta", 1.0, "rci");
    c.weights.q_theta = NumberOr<double>(r, "q_theta", 1.0, "rci");
  }
  if (j.contains("sim")) c.steps = NumberOr<int>(j["sim"], "steps", c.steps, "sim");
  c.seed = NumberOr<unsigned>(j, "seed", c.seed, "config");
  if (j.contains("tolerances")) {
    const Json& t = j["tolerances"];
    c.solver.kkt_tol = NumberOr<double>(t, "kkt", c.solver.kkt_tol, "tolerances");
    c.solver.feas_tol = NumberOr<double>(t, "feasibility", c.solver.feas_tol, "tolerances");
    c.solver.max_iter = NumberOr<int>(t, "max_iter", c.solver.max_iter, "tolerances");
    c.constraint_tol = NumberOr<double>(t, "constraint", c.constraint_tol, "tolerances");
  }
  const Json& subs = Require(j, "subsystems", "config");
  if (!subs.is_array()) throw ConfigError("subsystems: expected an array");
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const Json& s = subs[i];
    const std::string at = "subsystems[" + std::to_string(i) + "]";
    SubsystemConfig sc;
    sc.name = s.contains("name") ? s["name"].get<std::string>() : "s" + std::to_string(i);
    sc.A = MatrixFromJson(Require(s, "A", at), at + ".A");
    sc.B = MatrixFromJson(Require(s, "B", at), at + ".B");
    sc.x_lo = VectorFromJson(Require(s, "x_lo", at), at + ".x_lo");
    sc.x_hi = VectorFromJson(Require(s, "x_hi", at), at + ".x_hi");
    sc.u_lo = VectorFromJson(Require(s, "u_lo", at), at + ".u_lo");
    sc.u_hi = VectorFromJson(Require(s, "u_hi", at), at + ".u_hi");
    sc.q_diag = VectorFromJson(Require(s, "Q_diag", at), at + ".Q_diag");
    sc.r_diag = VectorFromJson(Require(s, "R_diag", at), at + ".R_diag");
    sc.x0 = s.contains("x0") ? VectorFromJson(s["x0"], at + ".x0")
                             : Vector::Zero(sc.A.rows());
    c.subsystems.push_back(std::move(sc));
  }
  if (j.contains("couplings")) {
    const Json& cps = j["couplings"];
    if (!cps.is_array()) throw ConfigError("couplings: expected an array");
    for (std::size_t k = 0; k < cps.size(); ++k) {
      const Json& cj = cps[k];
      const std::string at = "couplings[" + std::to_string(k) + "]";
      CouplingConfig cp;
      cp.i = Number<int>(Require(cj, "i", at), at + ".i");
      cp.j = Number<int>(Require(cj, "j", at), at + ".j");
      cp.A = MatrixFromJson(Require(cj, "A", at), at + ".A");
      cp.B = MatrixFromJson(Require(cj, "B", at), at + ".B");
      c.couplings.push_back(std::move(cp));
    }
  }
  ValidateConfig(c);
  return c;
}

inline Json SerializeConfig(const Config& c) {
  using internal::ToJson;
  Json j;
  j["name"] = c.name;
  j["time_domain"] = c.continuous ? "continuous" : "discrete";
  if (c.continuous) j["Ts"] = c.ts;
  j["horizons"] = {{"N", c.horizons.N}, {"H", c.horizons.H}};
  j["rci"] = {{"h", c.rci_h}, {"q_eta", c.weights.q_eta}, {"q_theta", c.weights.q_theta}};
  j["sim"] = {{"steps", c.steps}};
  j["seed"] = c.seed;
  j["tolerances"] = {{"kkt", c.solver.kkt_tol},
                     {"feasibility", c.solver.feas_tol},
                     {"max_iter", c.solver.max_iter},
                     {"constraint", c.constraint_tol}};
  Json subs = Json::array();
  for (const auto& s : c.subsystems) {
    subs.push_back({{"name", s.name},
                    {"A", ToJson(s.A)},
                    {"B", ToJson(s.B)},
                    {"x_lo", ToJson(s.x_lo)},
                    {"x_hi", ToJson(s.x_hi)},
                    {"u_lo", ToJson(s.u_lo)},
                    {"u_hi", ToJson(s.u_hi)},
                    {"Q_diag", ToJson(s.q_diag)},
                    {"R_diag", ToJson(s.r_diag)},
                    {"x0", ToJson(s.x0)}});
  }
  j["subsystems"] = subs;
  Json cps = Json::array();
  for (const auto& cp : c.couplings) {
    cps.push_back({{"i", cp.i}, {"j", cp.j}, {"A", ToJson(cp.A)}, {"B", ToJson(cp.B)}});
  }
  j["couplings"] = cps;
  return j;
}

inline std::string ReadFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void WriteFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(path + ": cannot write file");
  out << text;
  if (!out) throw ConfigError(path + ": write failed");
}

inline Json ParseJsonText(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON: " + e.what());
  }
}

inline Config LoadConfig(const std::string& path) {
  try {
    return ParseConfig(ParseJsonText(ReadFile(path), path));
  } catch (const Json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// The discrete-time partitioned plant described by a configuration;
/// continuous data are discretized as one stacked system.
inline CoupledSystem BuildSystem(const Config& c) {
  ValidateConfig(c);
  std::vector<SubsystemModel> subs;
  for (std::size_t i = 0; i < c.subsystems.size(); ++i) {
    const SubsystemConfig& s = c.subsystems[i];
    SubsystemModel m;
    m.id = static_cast<int>(i);
    m.name = s.name;
    m.A = s.A;
    m.B = s.B;
    m.X = Box(s.x_lo, s.x_hi);
    m.U = Box(s.u_lo, s.u_hi);
    m.Q = s.q_diag.asDiagonal();
    m.R = s.r_diag.asDiagonal();
    subs.push_back(std::move(m));
  }
  for (const CouplingConfig& cp : c.couplings) {
    Coupling& dst = subs[cp.i].couplings[cp.j];
    if (dst.A.size() == 0) {
      dst.A = Matrix::Zero(cp.A.rows(), cp.A.cols());
      dst.B = Matrix::Zero(cp.B.rows(), cp.B.cols());
    }
    dst.A += cp.A;
    dst.B += cp.B;
  }
  for (auto& m : subs) {
    for (auto it = m.couplings.begin(); it != m.couplings.end();) {
      it = it->second.IsZero() ? m.couplings.erase(it) : std::next(it);
    }
  }
  CoupledSystem sys(std::move(subs));
  if (c.continuous) sys = DiscretizeSystem(sys, c.ts);
  for (const SubsystemModel& m : sys.subsystems()) ValidateSubsystem(m);
  return sys;
}

/// Four trucks joined by springs and dampers; state (position, velocity).
inline Config TruckBenchmark() {
  Config c;
  c.name = "truck_benchmark";
  c.continuous = true;
  c.ts = 0.1;
  c.horizons = {25, 26};
  c.rci_h = 10;
  c.weights = {1.0, 1.0};
  c.steps = 300;
  const double mass[4] = {3.0, 2.0, 3.0, 6.0};
  const double u_max[4] = {4.0, 4.0, 4.0, 6.0};
  const Vector x0[4] = {Eigen::Vector2d(1.8, -2.0), Eigen::Vector2d(0.5, 5.0), Eigen::Vector2d(-0.9, -5.0),
                        Eigen::Vector2d(-1.8, 2.0)};
  // (i, j, stiffness, damping)
  struct Link {
    int i, j;
    double k, h;
  };
  const Link links[3] = {{0, 1, 0.5, 0.2}, {1, 2, 0.75, 0.25}, {2, 3, 1.0, 0.3}};
  double k_sum[4] = {0, 0, 0, 0}, h_sum[4] = {0, 0, 0, 0};
  for (const Link& l : links) {
    k_sum[l.i] += l.k;
    k_sum[l.j] += l.k;
    h_sum[l.i] += l.h;
    h_sum[l.j] += l.h;
  }
  for (int i = 0; i < 4; ++i) {
    SubsystemConfig s;
    s.name = "truck" + std::to_string(i + 1);
    s.A = Matrix{{0.0, 1.0}, {-k_sum[i] / mass[i], -h_sum[i] / mass[i]}};
    s.B = Matrix{{0.0}, {100.0}};
    s.x_lo = Eigen::Vector2d(-2.0, -8.0);
    s.x_hi = Eigen::Vector2d(2.0, 8.0);
    s.u_lo = Vector::Constant(1, -u_max[i]);
    s.u_hi = Vector::Constant(1, u_max[i]);
    s.q_diag = Vector::Ones(2);
    s.r_diag = Vector::Ones(1);
    s.x0 = x0[i];
    c.subsystems.push_back(std::move(s));
  }
  for (const Link& l : links) {
    for (const auto& [a, b] : {std::pair{l.i, l.j}, std::pair{l.j, l.i}}) {
      CouplingConfig cp;
      cp.i = a;
      cp.j = b;
      cp.A = Matrix{{0.0, 0.0}, {l.k / mass[a], l.h / mass[a]}};
      cp.B = Matrix::Zero(2, 1);
      c.couplings.push_back(std::move(cp));
    }
  }
  return c;
}

// Design files.

inline Json SerializeDesign(const std::vector<SubsystemDesign>& design,
                            const Config& c) {
  using internal::ToJson;
  Json j;
  j["config"] = c.name;
  j["h"] = c.rci_h;
  j["q_eta"] = c.weights.q_eta;
  j["q_theta"] = c.weights.q_theta;
  Json subs = Json::array();
  for (std::size_t i = 0; i < design.size(); ++i) {
    const SubsystemDesign& d = design[i];
    const ScalingConstants& s = d.scalings;
    Json m = Json::array();
    for (const Matrix& Ml : d.full.M) m.push_back(ToJson(Ml));
    subs.push_back({{"id", static_cast<int>(i)},
                    {"alpha_x", s.alpha_x},
                    {"alpha_u", s.alpha_u},
                    {"beta_x", s.beta_x},
                    {"beta_u", s.beta_u},
                    {"xi_x", s.xi_x},
                    {"xi_u", s.xi_u},
                    {"eta", d.full.eta},
                    {"theta", d.full.theta},
                    {"eta_tilde", d.hat.eta},
                    {"theta_tilde", d.hat.theta},
                    {"delta", d.full.delta},
                    {"M", m}});
  }
  j["subsystems"] = subs;
  return j;
}

/// Rebuilds designs from a file. Interaction sets and stage maps are
/// recomputed from the system; the scalars are taken from the file as is,
/// so a tampered file is reported by verification rather than repaired.
inline std::vector<SubsystemDesign> ParseDesign(const Json& j, const CoupledSystem& sys) {
  using namespace internal;
  const int h = Number<int>(Require(j, "h", "design"), "design.h");
  const Json& subs = Require(j, "subsystems", "design");
  if (!subs.is_array() || static_cast<int>(subs.size()) != sys.size()) {
    throw ConfigError("design.subsystems: expected one entry per subsystem");
  }
  std::vector<SubsystemDesign> out(sys.size());
  std::map<int, double> rest_x, rest_u;
  const auto ones = UniformScalings(sys, 1.0);
  for (int i = 0; i < sys.size(); ++i) {
    const Json& s = subs[i];
    const std::string at = "design.subsystems[" + std::to_string(i) + "]";
    SubsystemDesign& d = out[i];
    ScalingConstants& sc = d.scalings;
    sc.alpha_x = Number<double>(Require(s, "alpha_x", at), at + ".alpha_x");
    sc.alpha_u = Number<double>(Require(s, "alpha_u", at), at + ".alpha_u");
    sc.beta_x = Number<double>(Require(s, "beta_x", at), at + ".beta_x");
    sc.beta_u = Number<double>(Require(s, "beta_u", at), at + ".beta_u");
    sc.xi_x = Number<double>(Require(s, "xi_x", at), at + ".xi_x");
    sc.xi_u = Number<double>(Require(s, "xi_u", at), at + ".xi_u");
    if (!sc.Valid(1e-9)) throw ConfigError(at + ": scaling constants out of range");
    const Json& mj = Require(s, "M", at);
    if (!mj.is_array() || static_cast<int>(mj.size()) != h) {
      throw ConfigError(at + ".M: expected h matrices");
    }
    RciDesign& full = d.full;
    full.h = h;
    full.A = sys[i].A;
    full.B = sys[i].B;
    for (int l = 0; l < h; ++l) {
      Matrix Ml = MatrixFromJson(mj[l], at + ".M[" + std::to_string(l) + "]");
      if (Ml.rows() != sys[i].m() || Ml.cols() != sys[i].n()) {
        throw ConfigError(at + ".M: matrix shape");
      }
      full.M.push_back(std::move(Ml));
    }
    full.D = ComputeStageMaps(full.A, full.B, full.M);
    full.eta = Number<double>(Require(s, "eta", at), at + ".eta");
    full.theta = Number<double>(Require(s, "theta", at), at + ".theta");
    full.delta = NumberOr<double>(s, "delta", full.eta + full.theta, at);
    full.W = CouplingDisturbanceSet(sys, i, ones, ones);
    rest_x[i] = 1.0 - sc.alpha_x;
    rest_u[i] = 1.0 - sc.alpha_u;
  }
  for (int i = 0; i < sys.size(); ++i) {
    RciDesign& hat = out[i].hat;
    hat = out[i].full;
    hat.W = CouplingDisturbanceSet(sys, i, rest_x, rest_u);
    hat.eta = out[i].scalings.xi_x;
    hat.theta = out[i].scalings.xi_u;
    hat.delta = hat.eta + hat.theta;
  }
  return out;
}

inline std::vector<SubsystemDesign> LoadDesign(const std::string& path,
                                               const CoupledSystem& sys) {
  try {
    return ParseDesign(ParseJsonText(ReadFile(path), path), sys);
  } catch (const Json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace nedmpc

#pragma once

// Off-line design of the invariance-inducing feedback and of the constraint
// scaling constants.
//
// The robust control invariant set is never enumerated; it is held
// implicitly as
//
//   R_h(M) = D_0 W + D_1 W + ... + D_{h-1} W          (Minkowski sum)
//   D_0 = I,  D_l = A^l + sum_{j<l} A^{l-1-j} B M_j,   D_h(M) = 0
//
// and every query against it is a support evaluation or an LP over
// per-stage convex weights.

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "nedmpc/model.hpp"
#include "nedmpc/qp.hpp"
#include "nedmpc/set_geometry.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

struct RciWeights {
  double q_eta = 1.0;
  double q_theta = 1.0;

  void Validate() const {
    if (!(q_eta >= 0.0) || !(q_theta >= 0.0) || (q_eta == 0.0 && q_theta == 0.0)) {
      throw ParameterError("RciWeights: weights must be nonnegative and not both zero");
    }
  }
};

/// Fractions of X_i and U_i given to the main problem (alpha), the
/// ancillary problem (beta) and the invariance controller (xi).
struct ScalingConstants {
  double alpha_x = 1.0;
  double alpha_u = 1.0;
  double beta_x = 0.0;
  double beta_u = 0.0;
  double xi_x = 0.0;
  double xi_u = 0.0;

  double sum_x() const { return alpha_x + beta_x + xi_x; }
  double sum_u() const { return alpha_u + beta_u + xi_u; }

  bool Valid(double tol = 1e-12) const {
    for (double v : {alpha_x, alpha_u, beta_x, beta_u, xi_x, xi_u}) {
      if (!(v >= 0.0 && v <= 1.0)) return false;
    }
    return sum_x() <= 1.0 + tol && sum_u() <= 1.0 + tol;
  }
};

struct RciDesign {
  int h = 0;
  Matrix A;
  Matrix B;
  std::vector<Matrix> M;  // M_0 .. M_{h-1}, each m x n
  std::vector<Matrix> D;  // D_0 .. D_h
  double eta = 0.0;
  double theta = 0.0;
  double delta = 0.0;
  ConvexSet W;
};

/// D_0 .. D_h for the given gains.
inline std::vector<Matrix> ComputeStageMaps(const Matrix& A, const Matrix& B,
                                            const std::vector<Matrix>& M) {
  const Index n = A.rows();
  const int h = static_cast<int>(M.size());
  std::vector<Matrix> D;
  D.reserve(h + 1);
  D.push_back(Matrix::Identity(n, n));
  // D_{l+1} = A D_l + B M_l
  for (int l = 0; l < h; ++l) D.push_back(A * D[l] + B * M[l]);
  return D;
}

/// Facet-wise containment ratio of R_h(M) built from W in the box X.
inline double StateContainmentRatio(const std::vector<Matrix>& D, int h,
                                    const ConvexSet& W, const Box& X) {
  double ratio = 0.0;
  for (Index k = 0; k < X.num_facets(); ++k) {
    double sup = 0.0;
    for (int l = 0; l < h; ++l) sup += Support(W, D[l].transpose() * X.normal(k));
    ratio = std::max(ratio, sup / X.offset(k));
  }
  return ratio;
}

/// Facet-wise containment ratio of mu(R_h) = sum_l M_l W in the box U.
inline double InputContainmentRatio(const std::vector<Matrix>& M,
                                    const ConvexSet& W, const Box& U) {
  double ratio = 0.0;
  for (Index k = 0; k < U.num_facets(); ++k) {
    double sup = 0.0;
    for (const Matrix& Ml : M) sup += Support(W, Ml.transpose() * U.normal(k));
    ratio = std::max(ratio, sup / U.offset(k));
  }
  return ratio;
}

namespace internal {

// Minimum-norm correction of the gains onto {M : D_h(M) = 0}.
inline void ProjectOntoDeadbeat(const Matrix& A, const Matrix& B,
                                std::vector<Matrix>* M) {
  const Index n = A.rows();
  const Index m = B.cols();
  const int h = static_cast<int>(M->size());
  // vec(D_h) = vec(A^h) + L vec(M), with row (r, c) and column (j, q, c').
  std::vector<Matrix> pw(h + 1);
  pw[0] = Matrix::Identity(n, n);
  for (int p = 1; p <= h; ++p) pw[p] = A * pw[p - 1];
  Matrix L = Matrix::Zero(n * n, h * m * n);
  Vector v(h * m * n);
  for (int j = 0; j < h; ++j) {
    const Matrix E = pw[h - 1 - j] * B;
    for (Index q = 0; q < m; ++q) {
      for (Index c = 0; c < n; ++c) {
        const Index col = (j * m + q) * n + c;
        v(col) = (*M)[j](q, c);
        for (Index r = 0; r < n; ++r) L(r * n + c, col) = E(r, q);
      }
    }
  }
  Vector target(n * n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) target(r * n + c) = pw[h](r, c);
  }
  const Vector resid = L * v + target;
  const Vector corr = L.completeOrthogonalDecomposition().solve(resid);
  v -= corr;
  for (int j = 0; j < h; ++j) {
    for (Index q = 0; q < m; ++q) {
      for (Index c = 0; c < n; ++c) (*M)[j](q, c) = v((j * m + q) * n + c);
    }
  }
}

// Deterministic directions: the axes plus seeded random unit vectors.
inline std::vector<Vector> SampleDirections(Index dim, int count, unsigned seed) {
  std::vector<Vector> out;
  for (Index i = 0; i < dim; ++i) {
    out.push_back(Vector::Unit(dim, i));
    out.push_back(-Vector::Unit(dim, i));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (int k = 0; k < count; ++k) {
    Vector d(dim);
    for (Index i = 0; i < dim; ++i) d(i) = nd(rng);
    out.push_back(d.normalized());
  }
  return out;
}

}  // namespace internal

/// Solves the optimized-RCI LP
///
///   min delta  s.t.  D_h(M) = 0,  R_h(M) in eta X,  mu(R_h) in theta U,
///                    eta, theta in [0, 1],  q_eta eta + q_theta theta <= delta
///
/// with per-stage, per-facet support bounds as auxiliary variables. The
/// returned eta and theta are the exact containment ratios of the returned
/// gains, evaluated by supports after projecting the gains onto D_h = 0.
inline RciDesign SolveRci(const Matrix& A, const Matrix& B, const ConvexSet& W,
                          const Box& X, const Box& U, int h,
                          const RciWeights& weights = {},
                          const qp::SolverSettings& settings = {}) {
  weights.Validate();
  const Index n = A.rows();
  const Index m = B.cols();
  RequireSameDim(A.cols(), n, "SolveRci(A)");
  RequireSameDim(B.rows(), n, "SolveRci(B)");
  RequireSameDim(W.dim(), n, "SolveRci(W)");
  RequireSameDim(X.dim(), n, "SolveRci(X)");
  RequireSameDim(U.dim(), m, "SolveRci(U)");
  if (h < n) {
    throw ParameterError("SolveRci: horizon h = " + std::to_string(h) +
                         " must be at least the state dimension " +
                         std::to_string(n));
  }
  if (ControllabilityRank(A, B) != n) {
    throw ParameterError("SolveRci: (A, B) is not controllable");
  }

  RciDesign design;
  design.h = h;
  design.A = A;
  design.B = B;
  design.W = W;
  design.M.assign(h, Matrix::Zero(m, n));

  if (!W.IsOrigin()) {
    const Index nx_facets = X.num_facets();
    const Index nu_facets = U.num_facets();
    const Index n_m = h * m * n;
    const Index i_eta = n_m;
    const Index i_theta = n_m + 1;
    const Index i_delta = n_m + 2;
    const Index base_t = n_m + 3;
    const Index base_s = base_t + h * nx_facets;
    const Index nv = base_s + h * nu_facets;
    const auto mvar = [&](int l, Index q, Index c) { return (l * m + q) * n + c; };

    std::vector<Matrix> pw(h + 1);
    pw[0] = Matrix::Identity(n, n);
    for (int p = 1; p <= h; ++p) pw[p] = A * pw[p - 1];

    std::vector<Eigen::Triplet<double>> teq, tin;
    Vector beq(n * n);
    for (Index r = 0; r < n; ++r) {
      for (Index c = 0; c < n; ++c) {
        const Index row = r * n + c;
        beq(row) = -pw[h](r, c);
        for (int j = 0; j < h; ++j) {
          const Matrix E = pw[h - 1 - j] * B;
          for (Index q = 0; q < m; ++q) {
            if (E(r, q) != 0.0) teq.emplace_back(row, mvar(j, q, c), E(r, q));
          }
        }
      }
    }

    std::vector<double> hin;
    Index row = 0;
    const auto& gens = W.generators();
    for (int l = 0; l < h; ++l) {
      for (Index k = 0; k < nx_facets; ++k) {
        const Vector ck = X.normal(k);
        const Vector ck_al = pw[l].transpose() * ck;
        // c_k' A^{l-1-j} B, one row vector per j < l
        std::vector<Vector> coef(l);
        for (int j = 0; j < l; ++j) coef[j] = (pw[l - 1 - j] * B).transpose() * ck;
        for (const Vector& g : gens) {
          for (int j = 0; j < l; ++j) {
            for (Index q = 0; q < m; ++q) {
              for (Index c = 0; c < n; ++c) {
                const double v = coef[j](q) * g(c);
                if (v != 0.0) tin.emplace_back(row, mvar(j, q, c), v);
              }
            }
          }
          tin.emplace_back(row, base_t + l * nx_facets + k, -1.0);
          hin.push_back(-ck_al.dot(g));
          ++row;
        }
      }
      for (Index k = 0; k < nu_facets; ++k) {
        const Vector ck = U.normal(k);
        for (const Vector& g : gens) {
          for (Index q = 0; q < m; ++q) {
            for (Index c = 0; c < n; ++c) {
              const double v = ck(q) * g(c);
              if (v != 0.0) tin.emplace_back(row, mvar(l, q, c), v);
            }
          }
          tin.emplace_back(row, base_s + l * nu_facets + k, -1.0);
          hin.push_back(0.0);
          ++row;
        }
      }
    }
    for (Index k = 0; k < nx_facets; ++k) {
      for (int l = 0; l < h; ++l) tin.emplace_back(row, base_t + l * nx_facets + k, 1.0);
      tin.emplace_back(row, i_eta, -X.offset(k));
      hin.push_back(0.0);
      ++row;
    }
    for (Index k = 0; k < nu_facets; ++k) {
      for (int l = 0; l < h; ++l) tin.emplace_back(row, base_s + l * nu_facets + k, 1.0);
      tin.emplace_back(row, i_theta, -U.offset(k));
      hin.push_back(0.0);
      ++row;
    }
    for (Index v : {i_eta, i_theta}) {
      tin.emplace_back(row++, v, -1.0);
      hin.push_back(0.0);
      tin.emplace_back(row++, v, 1.0);
      hin.push_back(1.0);
    }
    tin.emplace_back(row, i_eta, weights.q_eta);
    tin.emplace_back(row, i_theta, weights.q_theta);
    tin.emplace_back(row, i_delta, -1.0);
    hin.push_back(0.0);
    ++row;

    qp::SparseMatrix Aeq(n * n, nv), Gin(row, nv);
    Aeq.setFromTriplets(teq.begin(), teq.end());
    Gin.setFromTriplets(tin.begin(), tin.end());
    Vector c = Vector::Zero(nv);
    c(i_delta) = 1.0;
    const qp::Solution sol =
        qp::SolveLp(c, Aeq, beq, Gin,
                    Eigen::Map<const Vector>(hin.data(), static_cast<Index>(hin.size())),
                    settings);
    if (sol.status == qp::SolveStatus::kInfeasible) {
      throw InfeasibleError(
          InfeasibleError::Kind::kRciDesign,
          "no RCI design at h = " + std::to_string(h) +
              "; try a larger h or weaker coupling (the disturbance set may "
              "not fit inside the state constraints)");
    }
    if (!sol.optimal()) {
      throw SolverError("SolveRci: LP did not converge");
    }
    for (int l = 0; l < h; ++l) {
      for (Index q = 0; q < m; ++q) {
        for (Index cc = 0; cc < n; ++cc) design.M[l](q, cc) = sol.z(mvar(l, q, cc));
      }
    }
  }

  internal::ProjectOntoDeadbeat(A, B, &design.M);
  design.D = ComputeStageMaps(A, B, design.M);
  design.eta = StateContainmentRatio(design.D, h, W, X);
  design.theta = InputContainmentRatio(design.M, W, U);
  design.delta = weights.q_eta * design.eta + weights.q_theta * design.theta;
  if (design.eta > 1.0 + 1e-9 || design.theta > 1.0 + 1e-9) {
    throw InfeasibleError(InfeasibleError::Kind::kRciDesign,
                          "no RCI design at h = " + std::to_string(h) +
                              ": containment ratio exceeds 1");
  }
  return design;
}

/// With the gains of `design` held fixed, the containment ratios of the set
/// built from the summand W_hat. If `complement` is given, W must equal
/// W_hat + complement (checked by support additivity); otherwise only
/// W_hat being inside W is checked.
inline std::pair<double, double> RescaleForSummand(
    const RciDesign& design, const ConvexSet& W_hat, const Box& X, const Box& U,
    const ConvexSet* complement = nullptr) {
  RequireSameDim(W_hat.dim(), design.W.dim(), "RescaleForSummand");
  for (const Vector& d : internal::SampleDirections(W_hat.dim(), 64, 7U)) {
    const double hw = Support(design.W, d);
    const double hs = Support(W_hat, d);
    const double scale = 1e-8 * std::max(1.0, std::abs(hw));
    if (complement != nullptr) {
      if (std::abs(hs + Support(*complement, d) - hw) > scale) {
        throw ParameterError("RescaleForSummand: W_hat is not a summand of W");
      }
    } else if (hs > hw + scale) {
      throw ParameterError("RescaleForSummand: W_hat is not contained in W");
    }
  }
  const double eta_t = StateContainmentRatio(design.D, design.h, W_hat, X);
  const double theta_t = InputContainmentRatio(design.M, W_hat, U);
  if (eta_t > 1.0 || theta_t > 1.0) {
    throw InfeasibleError(InfeasibleError::Kind::kNestedDesign,
                          "RescaleForSummand: rescaled ratio exceeds 1");
  }
  return {eta_t, theta_t};
}

/// The design of one subsystem.
struct SubsystemDesign {
  ScalingConstants scalings;
  RciDesign full;  // for W_i
  RciDesign hat;   // same gains, built from the unplanned set W_hat_i
};

/// Two passes: (A) an RCI design per subsystem for the full interaction
/// set, fixing alpha = 1 - (eta, theta); (B) with every neighbor's alpha
/// known, the unplanned set W_hat_i and its rescaled ratios give xi, and
/// beta takes the remainder.
inline std::vector<SubsystemDesign> DesignScalings(
    const CoupledSystem& sys, int h, const RciWeights& weights = {},
    const qp::SolverSettings& settings = {}) {
  const int count = sys.size();
  const auto ones = UniformScalings(sys, 1.0);

  std::vector<ConvexSet> W(count);
  for (int i = 0; i < count; ++i) {
    W[i] = CouplingDisturbanceSet(sys, i, ones, ones);
    if (ContainmentRatio(W[i], sys[i].X) >= 1.0) {
      throw ParameterError("subsystem " + std::to_string(i) +
                           ": interaction set is not inside the interior of X_i");
    }
  }

  // Pass A: independent per subsystem.
  std::vector<std::future<RciDesign>> jobs;
  for (int i = 0; i < count; ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      return SolveRci(sys[i].A, sys[i].B, W[i], sys[i].X, sys[i].U, h, weights,
                      settings);
    }));
  }
  std::vector<SubsystemDesign> out(count);
  std::map<int, double> alpha_x, alpha_u, rest_x, rest_u;
  for (int i = 0; i < count; ++i) {
    try {
      out[i].full = jobs[i].get();
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(e.kind(), "subsystem " + std::to_string(i) + ": " + e.what());
    }
    out[i].scalings.alpha_x = 1.0 - out[i].full.eta;
    out[i].scalings.alpha_u = 1.0 - out[i].full.theta;
    alpha_x[i] = out[i].scalings.alpha_x;
    alpha_u[i] = out[i].scalings.alpha_u;
    rest_x[i] = 1.0 - alpha_x[i];
    rest_u[i] = 1.0 - alpha_u[i];
  }

  // Pass B: needs every alpha.
  for (int i = 0; i < count; ++i) {
    const ConvexSet w_hat = CouplingDisturbanceSet(sys, i, rest_x, rest_u);
    const ConvexSet w_bar = CouplingDisturbanceSet(sys, i, alpha_x, alpha_u);
    const auto [eta_t, theta_t] =
        RescaleForSummand(out[i].full, w_hat, sys[i].X, sys[i].U, &w_bar);
    ScalingConstants& sc = out[i].scalings;
    sc.xi_x = eta_t;
    sc.xi_u = theta_t;
    sc.beta_x = 1.0 - sc.alpha_x - sc.xi_x;
    sc.beta_u = 1.0 - sc.alpha_u - sc.xi_u;
    if (sc.beta_x < -1e-12 || sc.beta_u < -1e-12) {
      throw InfeasibleError(InfeasibleError::Kind::kNestedDesign,
                            "subsystem " + std::to_string(i) +
                                ": coupling too strong for nested design (beta < 0)");
    }
    sc.beta_x = std::max(sc.beta_x, 0.0);
    sc.beta_u = std::max(sc.beta_u, 0.0);

    RciDesign& hat = out[i].hat;
    hat = out[i].full;
    hat.W = w_hat;
    hat.eta = eta_t;
    hat.theta = theta_t;
    hat.delta = weights.q_eta * eta_t + weights.q_theta * theta_t;
  }
  return out;
}

/// Result of evaluating the selection map at one point.
struct Selection {
  Vector control;
  std::vector<Vector> stage_points;  // w_l with e = sum_l D_l w_l
  bool relaxed = false;              // e was outside the set
  double residual = 0.0;             // ||sum_l D_l w_l - e||_inf
};

/// Minimal selection map of an implicitly represented RCI set: writes e as
/// sum_l D_l w_l with w_l in conv(W U {0}) of least total weight, and
/// returns sum_l M_l w_l.
class SelectionMap {
 public:
  SelectionMap() = default;

  explicit SelectionMap(const RciDesign& design, qp::SolverSettings settings = {})
      : n_(design.A.rows()),
        m_(design.B.cols()),
        h_(design.h),
        settings_(settings),
        G_(ExtremeGenerators(design.W).GeneratorMatrix()) {
    k_ = G_.cols();
    zero_set_ = design.W.IsOrigin();
    const Index nv = h_ * k_;
    Matrix DG(n_, nv);
    MG_.resize(m_, nv);
    for (int l = 0; l < h_; ++l) {
      DG.middleCols(l * k_, k_) = design.D[l] * G_;
      MG_.middleCols(l * k_, k_) = design.M[l] * G_;
    }
    Aeq_ = DG.sparseView();
    std::vector<Eigen::Triplet<double>> t;
    for (Index j = 0; j < nv; ++j) t.emplace_back(j, j, -1.0);
    for (int l = 0; l < h_; ++l) {
      for (Index g = 0; g < k_; ++g) t.emplace_back(nv + l, l * k_ + g, 1.0);
    }
    Gin_.resize(nv + h_, nv);
    Gin_.setFromTriplets(t.begin(), t.end());
    hin_ = Vector::Zero(nv + h_);
    hin_.tail(h_).setOnes();
  }

  int h() const { return h_; }

  Selection operator()(const Vector& e) const {
    RequireSameDim(e.size(), n_, "SelectionMap");
    Selection out;
    out.control = Vector::Zero(m_);
    out.stage_points.assign(h_, Vector::Zero(n_));
    if (e.isZero(0.0)) return out;
    if (zero_set_) {
      out.residual = e.lpNorm<Eigen::Infinity>();
      out.relaxed = out.residual > settings_.feas_tol;
      return out;
    }
    const Index nv = h_ * k_;
    qp::Solution sol =
        qp::SolveLp(Vector::Ones(nv), Aeq_, e, Gin_, hin_, settings_);
    if (sol.status == qp::SolveStatus::kInfeasible) {
      out.relaxed = true;
      sol = SolveRelaxed(e);
    }
    if (!sol.optimal()) {
      throw SolverError("SelectionMap: decomposition LP did not converge");
    }
    const Vector lambda = sol.z.head(nv).cwiseMax(0.0);
    out.control = MG_ * lambda;
    for (int l = 0; l < h_; ++l) {
      out.stage_points[l] = G_ * lambda.segment(l * k_, k_);
    }
    out.residual = (Aeq_ * lambda - e).lpNorm<Eigen::Infinity>();
    return out;
  }

 private:
  // Decomposition with slack on the equality rows, heavily penalized.
  qp::Solution SolveRelaxed(const Vector& e) const {
    const Index nv = h_ * k_;
    const Index nt = nv + 2 * n_;
    std::vector<Eigen::Triplet<double>> ta, tg;
    for (Index r = 0; r < Aeq_.rows(); ++r) {
      for (qp::SparseMatrix::InnerIterator it(Aeq_, r); it; ++it) {
        ta.emplace_back(r, it.col(), it.value());
      }
      ta.emplace_back(r, nv + r, 1.0);
      ta.emplace_back(r, nv + n_ + r, -1.0);
    }
    for (Index r = 0; r < Gin_.rows(); ++r) {
      for (qp::SparseMatrix::InnerIterator it(Gin_, r); it; ++it) {
        tg.emplace_back(r, it.col(), it.value());
      }
    }
    for (Index j = 0; j < 2 * n_; ++j) tg.emplace_back(Gin_.rows() + j, nv + j, -1.0);
    qp::SparseMatrix A(n_, nt), G(Gin_.rows() + 2 * n_, nt);
    A.setFromTriplets(ta.begin(), ta.end());
    G.setFromTriplets(tg.begin(), tg.end());
    Vector h = Vector::Zero(G.rows());
    h.head(hin_.size()) = hin_;
    Vector c = Vector::Ones(nt);
    c.tail(2 * n_).setConstant(1e6);
    return qp::SolveLp(c, A, e, G, h, settings_);
  }

  Index n_ = 0;
  Index m_ = 0;
  int h_ = 0;
  Index k_ = 0;
  bool zero_set_ = true;
  qp::SolverSettings settings_;
  Matrix G_;
  Matrix MG_;
  qp::SparseMatrix Aeq_;
  qp::SparseMatrix Gin_;
  Vector hin_;
};

/// Convenience wrapper for a single evaluation.
inline Selection SelectionControl(const RciDesign& design, const Vector& e,
                                  const qp::SolverSettings& settings = {}) {
  return SelectionMap(design, settings)(e);
}

struct RciReport {
  int samples = 0;
  double deadbeat_residual = 0.0;     // ||D_h(M)||_inf
  double state_containment = 0.0;     // max_k h_R(c_k) - eta d_k
  double input_containment = 0.0;     // max_k h_mu(R)(c_k) - theta d_k
  double sample_input_violation = 0.0;  // max over samples of gauge_U(mu) - theta
  double invariance_residual = 0.0;   // worst successor-witness residual
  int relaxed_selections = 0;
  int lp_membership_checks = 0;
  int lp_membership_failures = 0;

  bool ok(double tol = 1e-6) const {
    return deadbeat_residual <= 1e-8 && state_containment <= tol &&
           input_containment <= tol && sample_input_violation <= tol &&
           invariance_residual <= tol && relaxed_selections == 0 &&
           lp_membership_failures == 0;
  }
};

/// Empirical certificate of robust control invariance of R_h(M) for
/// (X, U, W): samples points as random per-stage generator mixtures,
/// evaluates the selection map, and checks that for every generator w of W
/// the successor A e + B mu(e) + w has the shifted decomposition
/// (w, w_0, ..., w_{h-2}). The first `lp_checks` samples additionally
/// decide successor membership by the decomposition LP for a spread of
/// generators.
inline RciReport VerifyRci(const RciDesign& design, const Box& X, const Box& U,
                           int n_samples, unsigned seed, int lp_checks = 3,
                           const qp::SolverSettings& settings = {}) {
  RciReport rep;
  rep.samples = n_samples;
  const Index n = design.A.rows();
  const int h = design.h;
  const std::vector<Matrix> D = ComputeStageMaps(design.A, design.B, design.M);
  rep.deadbeat_residual = D[h].lpNorm<Eigen::Infinity>();
  rep.state_containment = 0.0;
  for (Index k = 0; k < X.num_facets(); ++k) {
    double sup = 0.0;
    for (int l = 0; l < h; ++l) sup += Support(design.W, D[l].transpose() * X.normal(k));
    rep.state_containment = std::max(rep.state_containment, sup - design.eta * X.offset(k));
  }
  rep.input_containment = 0.0;
  for (Index k = 0; k < U.num_facets(); ++k) {
    double sup = 0.0;
    for (int l = 0; l < h; ++l) sup += Support(design.W, design.M[l].transpose() * U.normal(k));
    rep.input_containment = std::max(rep.input_containment, sup - design.theta * U.offset(k));
  }

  const SelectionMap mu(design, settings);
  const auto& gens = design.W.generators();
  const Index k = static_cast<Index>(gens.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<Index> pick(0, k - 1);
  for (int s = 0; s < n_samples; ++s) {
    // Mixture of up to three generators per stage; half the samples put
    // full weight on each stage so the boundary is exercised.
    Vector e = Vector::Zero(n);
    for (int l = 0; l < h; ++l) {
      const int parts = 1 + static_cast<int>(unif(rng) * 3.0);
      Vector wts(parts);
      for (int p = 0; p < parts; ++p) wts(p) = -std::log(1.0 - unif(rng) + 1e-300);
      const double total = (s % 2 == 0) ? 1.0 : unif(rng);
      wts *= total / wts.sum();
      Vector w = Vector::Zero(n);
      for (int p = 0; p < parts; ++p) w += wts(p) * gens[pick(rng)];
      e += D[l] * w;
    }
    const Selection sel = mu(e);
    if (sel.relaxed) ++rep.relaxed_selections;
    rep.sample_input_violation =
        std::max(rep.sample_input_violation, U.Gauge(sel.control) - design.theta);
    const Vector base = design.A * e + design.B * sel.control;
    Vector shifted = Vector::Zero(n);
    for (int l = 1; l < h; ++l) shifted += D[l] * sel.stage_points[l - 1];
    for (const Vector& g : gens) {
      const Vector succ = base + g;
      rep.invariance_residual = std::max(
          rep.invariance_residual, (shifted + g - succ).lpNorm<Eigen::Infinity>());
    }
    if (s < lp_checks) {
      const Index stride = std::max<Index>(1, k / 8);
      for (Index gi = 0; gi < k; gi += stride) {
        ++rep.lp_membership_checks;
        if (mu(base + gens[gi]).relaxed) ++rep.lp_membership_failures;
      }
    }
  }
  return rep;
}

}  // namespace nedmpc

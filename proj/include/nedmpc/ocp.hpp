#pragma once

// Main and ancillary finite-horizon problems, transcribed in simultaneous
// form: states and inputs are both decision variables, dynamics are
// equality rows and box constraints are single-variable rows.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nedmpc/model.hpp"
#include "nedmpc/qp.hpp"
#include "nedmpc/rci.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

struct Horizons {
  int N = 25;  // main
  int H = 26;  // ancillary

  void Validate() const {
    if (N < 1) throw ParameterError("Horizons: N must be at least 1");
    if (H < N + 1) {
      throw ParameterError("Horizons: H = " + std::to_string(H) +
                           " must be at least N + 1 = " + std::to_string(N + 1) +
                           " so that the planned disturbance vanishes inside "
                           "the ancillary horizon");
    }
  }
};

/// Optimal nominal plan: x(0..N), u(0..N-1), with x(N) = 0.
struct Prediction {
  std::vector<Vector> x;
  std::vector<Vector> u;
  double cost = 0.0;
};

/// Planned disturbance w(0..N) with w(N) = 0; zero past index N.
class DisturbanceSequence {
 public:
  DisturbanceSequence() = default;

  explicit DisturbanceSequence(std::vector<Vector> w) : w_(std::move(w)) {
    if (w_.empty()) throw ParameterError("DisturbanceSequence: empty");
    if (!w_.back().isZero(0.0)) {
      throw ParameterError("DisturbanceSequence: last entry must be zero");
    }
  }

  static DisturbanceSequence Zero(Index n, int N) {
    return DisturbanceSequence(std::vector<Vector>(N + 1, Vector::Zero(n)));
  }

  int N() const { return static_cast<int>(w_.size()) - 1; }
  Index dim() const { return w_.front().size(); }
  const std::vector<Vector>& entries() const { return w_; }

  Vector at(int k) const {
    return k < static_cast<int>(w_.size()) ? w_[k] : Vector::Zero(dim());
  }

  /// {w(1), ..., w(N), 0}
  DisturbanceSequence Tail() const {
    std::vector<Vector> t(w_.begin() + 1, w_.end());
    t.push_back(Vector::Zero(dim()));
    return DisturbanceSequence(std::move(t));
  }

  bool operator==(const DisturbanceSequence& o) const {
    if (w_.size() != o.w_.size()) return false;
    for (std::size_t k = 0; k < w_.size(); ++k) {
      if (w_[k] != o.w_[k]) return false;
    }
    return true;
  }

 private:
  std::vector<Vector> w_;
};

struct AncillarySolution {
  std::vector<Vector> e;  // e(0..H)
  std::vector<Vector> f;  // f(0..H-1)
  double cost = 0.0;
};

namespace internal {

struct Transcription {
  qp::QpProblem problem;
  Index n = 0;
  Index m = 0;
  int T = 0;
  std::vector<std::pair<Index, double>> pinned;  // zero-width boxes

  Index xi(int k) const { return k * n; }
  Index ui(int k) const { return (T + 1) * n + k * m; }
};

// x(0) = x0, x(k+1) = A x(k) + B u(k) + w(k), x(T) = 0, with
// x(k) in ax * X for k in [x_first, x_last] and u(k) in au * U for all k.
inline Transcription Transcribe(const SubsystemModel& sys, const Vector& x0, int T,
                                const DisturbanceSequence* w, double ax, int x_first,
                                int x_last, double au) {
  Transcription tr;
  const Index n = sys.n();
  const Index m = sys.m();
  tr.n = n;
  tr.m = m;
  tr.T = T;
  const Index nv = (T + 1) * n + T * m;

  std::vector<Eigen::Triplet<double>> tp;
  for (int k = 0; k < T; ++k) {
    for (Index r = 0; r < n; ++r) {
      for (Index c = 0; c < n; ++c) {
        if (sys.Q(r, c) != 0.0) tp.emplace_back(tr.xi(k) + r, tr.xi(k) + c, sys.Q(r, c));
      }
    }
    for (Index r = 0; r < m; ++r) {
      for (Index c = 0; c < m; ++c) {
        if (sys.R(r, c) != 0.0) tp.emplace_back(tr.ui(k) + r, tr.ui(k) + c, sys.R(r, c));
      }
    }
  }
  tr.problem.P.resize(nv, nv);
  tr.problem.P.setFromTriplets(tp.begin(), tp.end());
  tr.problem.q = Vector::Zero(nv);

  std::vector<Eigen::Triplet<double>> te, tg;
  std::vector<double> beq, hin;
  Index er = 0, gr = 0;
  for (Index r = 0; r < n; ++r) {
    te.emplace_back(er++, tr.xi(0) + r, 1.0);
    beq.push_back(x0(r));
  }
  for (int k = 0; k < T; ++k) {
    const Vector wk = w != nullptr ? w->at(k) : Vector::Zero(n);
    for (Index r = 0; r < n; ++r) {
      te.emplace_back(er, tr.xi(k + 1) + r, 1.0);
      for (Index c = 0; c < n; ++c) {
        if (sys.A(r, c) != 0.0) te.emplace_back(er, tr.xi(k) + c, -sys.A(r, c));
      }
      for (Index c = 0; c < m; ++c) {
        if (sys.B(r, c) != 0.0) te.emplace_back(er, tr.ui(k) + c, -sys.B(r, c));
      }
      beq.push_back(wk(r));
      ++er;
    }
  }
  for (Index r = 0; r < n; ++r) {
    te.emplace_back(er++, tr.xi(T) + r, 1.0);
    beq.push_back(0.0);
  }

  // A box scaled to zero width pins the variable.
  const auto add_box = [&](Index var, double lo, double hi) {
    if (hi - lo <= 1e-12) {
      te.emplace_back(er++, var, 1.0);
      beq.push_back(0.5 * (lo + hi));
      tr.pinned.emplace_back(var, 0.5 * (lo + hi));
      return;
    }
    tg.emplace_back(gr++, var, 1.0);
    hin.push_back(hi);
    tg.emplace_back(gr++, var, -1.0);
    hin.push_back(-lo);
  };
  for (int k = x_first; k <= x_last; ++k) {
    for (Index r = 0; r < n; ++r) {
      add_box(tr.xi(k) + r, ax * sys.X.lo()(r), ax * sys.X.hi()(r));
    }
  }
  for (int k = 0; k < T; ++k) {
    for (Index r = 0; r < m; ++r) {
      add_box(tr.ui(k) + r, au * sys.U.lo()(r), au * sys.U.hi()(r));
    }
  }
  tr.problem.Aeq.resize(er, nv);
  tr.problem.Aeq.setFromTriplets(te.begin(), te.end());
  tr.problem.beq = Eigen::Map<const Vector>(beq.data(), er);
  tr.problem.Gin.resize(gr, nv);
  tr.problem.Gin.setFromTriplets(tg.begin(), tg.end());
  tr.problem.hin = Eigen::Map<const Vector>(hin.data(), gr);
  return tr;
}

inline Vector PinnedSolution(const Transcription& tr, Vector z) {
  for (const auto& [var, value] : tr.pinned) z(var) = value;
  return z;
}

}  // namespace internal

/// Main problem at nominal state x_bar:
///   x(k) in alpha_x X for k = 1..N-1, u(k) in alpha_u U for k = 0..N-1,
///   x(N) = 0. Empty optional when infeasible.
inline std::optional<Prediction> TrySolveMain(const SubsystemModel& sys,
                                              const ScalingConstants& s,
                                              const Horizons& hz, const Vector& x_bar,
                                              const qp::SolverSettings& settings = {}) {
  hz.Validate();
  RequireSameDim(x_bar.size(), sys.n(), "SolveMain");
  const internal::Transcription tr = internal::Transcribe(
      sys, x_bar, hz.N, nullptr, s.alpha_x, 1, hz.N - 1, s.alpha_u);
  const qp::Solution sol = qp::SolveQp(tr.problem, settings);
  if (sol.status == qp::SolveStatus::kInfeasible) return std::nullopt;
  if (!sol.optimal()) throw SolverError("SolveMain: QP did not converge");
  const Vector z = internal::PinnedSolution(tr, sol.z);
  Prediction p;
  for (int k = 0; k <= hz.N; ++k) p.x.push_back(z.segment(tr.xi(k), sys.n()));
  for (int k = 0; k < hz.N; ++k) p.u.push_back(z.segment(tr.ui(k), sys.m()));
  // Roll the plan out again from the optimized inputs so the stored states
  // obey the nominal dynamics to rounding, and pin the equality-constrained
  // endpoints.
  p.x[0] = x_bar;
  for (int k = 0; k < hz.N; ++k) p.x[k + 1] = sys.A * p.x[k] + sys.B * p.u[k];
  p.x[hz.N].setZero();
  p.cost = 0.0;
  for (int k = 0; k < hz.N; ++k) p.cost += sys.StageCost(p.x[k], p.u[k]);
  return p;
}

inline Prediction SolveMain(const SubsystemModel& sys, const ScalingConstants& s,
                            const Horizons& hz, const Vector& x_bar,
                            const qp::SolverSettings& settings = {}) {
  auto p = TrySolveMain(sys, s, hz, x_bar, settings);
  if (!p) {
    throw InfeasibleError(InfeasibleError::Kind::kMain,
                          "main problem infeasible for subsystem " +
                              std::to_string(sys.id) +
                              ": nominal state outside the feasible region");
  }
  return *p;
}

/// Ancillary problem at planned error e_bar under planned disturbance w:
///   e(k+1) = A e(k) + B f(k) + w(k),  e(k) in beta_x X,  f(k) in beta_u U
///   for k = 0..H-1,  e(H) = 0.
inline std::optional<AncillarySolution> TrySolveAncillary(
    const SubsystemModel& sys, const ScalingConstants& s, const Horizons& hz,
    const Vector& e_bar, const DisturbanceSequence& w,
    const qp::SolverSettings& settings = {}) {
  hz.Validate();
  RequireSameDim(e_bar.size(), sys.n(), "SolveAncillary");
  RequireSameDim(w.dim(), sys.n(), "SolveAncillary(w)");
  const internal::Transcription tr = internal::Transcribe(
      sys, e_bar, hz.H, &w, s.beta_x, 0, hz.H - 1, s.beta_u);
  const qp::Solution sol = qp::SolveQp(tr.problem, settings);
  if (sol.status == qp::SolveStatus::kInfeasible) return std::nullopt;
  if (!sol.optimal()) throw SolverError("SolveAncillary: QP did not converge");
  const Vector z = internal::PinnedSolution(tr, sol.z);
  AncillarySolution a;
  for (int k = 0; k <= hz.H; ++k) a.e.push_back(z.segment(tr.xi(k), sys.n()));
  for (int k = 0; k < hz.H; ++k) a.f.push_back(z.segment(tr.ui(k), sys.m()));
  a.cost = 0.0;
  for (int k = 0; k < hz.H; ++k) a.cost += sys.StageCost(a.e[k], a.f[k]);
  return a;
}

inline AncillarySolution SolveAncillary(const SubsystemModel& sys,
                                        const ScalingConstants& s, const Horizons& hz,
                                        const Vector& e_bar, const DisturbanceSequence& w,
                                        const qp::SolverSettings& settings = {}) {
  auto a = TrySolveAncillary(sys, s, hz, e_bar, w, settings);
  if (!a) {
    throw InfeasibleError(InfeasibleError::Kind::kAncillary,
                          "ancillary problem infeasible for subsystem " +
                              std::to_string(sys.id));
  }
  return *a;
}

}  // namespace nedmpc

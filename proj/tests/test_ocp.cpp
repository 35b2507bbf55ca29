#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace nedmpc;

namespace {

// Interleaved dense transcription [x0, u0, x1, u1, ..., x_T] with every box
// dropped; valid as a reference whenever the solver's boxes are inactive.
struct DensePlan {
  std::vector<Vector> x, u;
  double cost = 0.0;
};

DensePlan UnconstrainedPlan(const SubsystemModel& s, const Vector& x0, int T,
                            const std::vector<Vector>& w) {
  const Index n = s.n(), m = s.m(), blk = n + m;
  const Index nv = T * blk + n;
  Matrix P = Matrix::Zero(nv, nv);
  for (int k = 0; k < T; ++k) {
    P.block(k * blk, k * blk, n, n) = s.Q;
    P.block(k * blk + n, k * blk + n, m, m) = s.R;
  }
  Matrix A = Matrix::Zero((T + 2) * n, nv);
  Vector b = Vector::Zero((T + 2) * n);
  A.block(0, 0, n, n).setIdentity();
  b.head(n) = x0;
  for (int k = 0; k < T; ++k) {
    const Index r = (k + 1) * n;
    A.block(r, (k + 1) * blk, n, n).setIdentity();
    A.block(r, k * blk, n, n) = -s.A;
    A.block(r, k * blk + n, n, m) = -s.B;
    if (k < static_cast<int>(w.size())) b.segment(r, n) = w[k];
  }
  A.block((T + 1) * n, T * blk, n, n).setIdentity();
  const oracle::Result r = oracle::KktSolve(P, Vector::Zero(nv), A, b);
  DensePlan out;
  for (int k = 0; k <= T; ++k) out.x.push_back(r.z.segment(k * blk, n));
  for (int k = 0; k < T; ++k) out.u.push_back(r.z.segment(k * blk + n, m));
  out.cost = r.objective;
  return out;
}

struct Pair {
  Config config;
  CoupledSystem sys;
  std::vector<SubsystemDesign> design;
  Horizons hz;
};

const Pair& Coupled() {
  static const Pair p = [] {
    Pair d;
    d.config = fixtures::CoupledPairConfig();
    d.sys = BuildSystem(d.config);
    d.design = DesignScalings(d.sys, d.config.rci_h, d.config.weights, d.config.solver);
    d.hz = d.config.horizons;
    return d;
  }();
  return p;
}

ControllerState Initial(const Pair& p, int i, const Vector& x0) {
  return InitialControllerState(p.sys[i], x0, p.hz, p.design[i].scalings,
                                std::make_shared<SelectionMap>(p.design[i].hat));
}

// A planned disturbance from a neighbor's actual plan.
DisturbanceSequence NeighborPlan(const Pair& p, int i, const Vector& xj) {
  const int j = 1 - i;
  const Prediction pj = SolveMain(p.sys[j], p.design[j].scalings, p.hz, xj);
  return AssembleDisturbance(p.sys[i], {{j, pj}}, p.hz.N);
}

}  // namespace

TEST(Horizons, AncillaryHorizonMustExceedMain) {
  EXPECT_THROW((Horizons{10, 10}.Validate()), ParameterError);
  EXPECT_THROW((Horizons{0, 5}.Validate()), ParameterError);
  EXPECT_NO_THROW((Horizons{10, 11}.Validate()));
}

TEST(DisturbanceSequence, ShiftAndPadding) {
  const DisturbanceSequence w({Vector::Constant(1, 1.0), Vector::Constant(1, 2.0),
                               Vector::Zero(1)});
  EXPECT_EQ(w.N(), 2);
  EXPECT_EQ(w.at(1)(0), 2.0);
  EXPECT_EQ(w.at(7)(0), 0.0);
  const DisturbanceSequence t = w.Tail();
  EXPECT_EQ(t.N(), 2);
  EXPECT_EQ(t.at(0)(0), 2.0);
  EXPECT_EQ(t.at(1)(0), 0.0);
  EXPECT_TRUE(t.Tail().Tail() == DisturbanceSequence::Zero(1, 2));
  EXPECT_THROW(DisturbanceSequence({Vector::Ones(1)}), ParameterError);
}

TEST(MainProblem, MatchesKktReferenceWhenBoxesAreInactive) {
  const Pair& p = Coupled();
  const SubsystemModel& s = p.sys[0];
  const Vector x0 = Eigen::Vector2d(0.3, -0.2);
  const Prediction pred = SolveMain(s, p.design[0].scalings, p.hz, x0);
  const DensePlan ref = UnconstrainedPlan(s, x0, p.hz.N, {});
  for (int k = 0; k < p.hz.N; ++k) {
    ASSERT_LT(s.U.Gauge(ref.u[k]), p.design[0].scalings.alpha_u);
    ASSERT_LT(s.X.Gauge(ref.x[k]), p.design[0].scalings.alpha_x);
    EXPECT_LE((pred.u[k] - ref.u[k]).lpNorm<Eigen::Infinity>(), 1e-6);
  }
  EXPECT_NEAR(pred.cost, ref.cost, 1e-7);
  EXPECT_EQ(pred.x.front(), x0);
  EXPECT_TRUE(pred.x.back().isZero(0.0));
}

TEST(MainProblem, RespectsTheScaledConstraints) {
  const Pair& p = Coupled();
  const SubsystemModel& s = p.sys[1];
  const ScalingConstants& sc = p.design[1].scalings;
  const Vector x0 = Eigen::Vector2d(3.0, 0.0);
  // The unconstrained plan breaks the input bound, so the bound is active.
  const DensePlan ref = UnconstrainedPlan(s, x0, p.hz.N, {});
  double ref_peak = 0.0;
  for (const Vector& u : ref.u) ref_peak = std::max(ref_peak, s.U.Gauge(u));
  ASSERT_GT(ref_peak, sc.alpha_u);
  const Prediction pred = SolveMain(s, sc, p.hz, x0);
  for (int k = 0; k < p.hz.N; ++k) {
    EXPECT_LE(s.U.Gauge(pred.u[k]), sc.alpha_u + 1e-9);
    if (k >= 1) EXPECT_LE(s.X.Gauge(pred.x[k]), sc.alpha_x + 1e-9);
  }
  EXPECT_GT(pred.cost, ref.cost);
}

TEST(MainProblem, ReportsInfeasibility) {
  const Pair& p = Coupled();
  // Too fast to stop within the horizon.
  const Vector x0 = Eigen::Vector2d(0.0, 4.9);
  EXPECT_FALSE(TrySolveMain(p.sys[0], p.design[0].scalings, p.hz, x0).has_value());
  try {
    SolveMain(p.sys[0], p.design[0].scalings, p.hz, x0);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.kind(), InfeasibleError::Kind::kMain);
  }
  EXPECT_THROW(SolveMain(p.sys[0], p.design[0].scalings, p.hz, Vector::Zero(3)),
               DimensionError);
}

TEST(AncillaryProblem, MatchesKktReferenceWhenBoxesAreInactive) {
  const Pair& p = Coupled();
  const SubsystemModel& s = p.sys[0];
  const ScalingConstants& sc = p.design[0].scalings;
  const DisturbanceSequence w = NeighborPlan(p, 0, Eigen::Vector2d(-0.2, 0.1));
  const Vector e0 = Eigen::Vector2d(1e-3, -5e-4);
  const AncillarySolution a = SolveAncillary(s, sc, p.hz, e0, w);
  const DensePlan ref = UnconstrainedPlan(s, e0, p.hz.H, w.entries());
  for (int k = 0; k < p.hz.H; ++k) {
    ASSERT_LT(s.U.Gauge(ref.u[k]), sc.beta_u);
    ASSERT_LT(s.X.Gauge(ref.x[k]), sc.beta_x);
    EXPECT_LE((a.f[k] - ref.u[k]).lpNorm<Eigen::Infinity>(), 1e-7);
    EXPECT_LE((a.e[k] - ref.x[k]).lpNorm<Eigen::Infinity>(), 1e-7);
  }
  EXPECT_NEAR(a.cost, ref.cost, 1e-9);
}

TEST(AncillaryProblem, ZeroWidthBoxesPinTheVariables) {
  const Config c = fixtures::DecoupledConfig();
  const CoupledSystem sys = BuildSystem(c);
  ScalingConstants sc;  // beta = 0
  const AncillarySolution a = SolveAncillary(sys[0], sc, c.horizons, Vector::Zero(2),
                                             DisturbanceSequence::Zero(2, c.horizons.N));
  for (const Vector& e : a.e) EXPECT_TRUE(e.isZero(0.0));
  for (const Vector& f : a.f) EXPECT_TRUE(f.isZero(0.0));
  EXPECT_EQ(a.cost, 0.0);
  EXPECT_FALSE(TrySolveAncillary(sys[0], sc, c.horizons, Eigen::Vector2d(0.1, 0.0),
                                 DisturbanceSequence::Zero(2, c.horizons.N))
                   .has_value());
}

TEST(AssembleDisturbance, SumsNeighborCouplings) {
  const Pair& p = Coupled();
  const int N = p.hz.N;
  Prediction pj;
  for (int k = 0; k < N; ++k) {
    pj.x.push_back(Eigen::Vector2d(0.1 * (N - k), -0.2));
    pj.u.push_back(Vector::Constant(1, 0.3));
  }
  pj.x.push_back(Vector::Zero(2));
  const DisturbanceSequence w = AssembleDisturbance(p.sys[0], {{1, pj}}, N);
  ASSERT_EQ(w.N(), N);
  for (int k = 0; k < N; ++k) {
    EXPECT_NEAR(w.at(k)(0), 0.0, 1e-15);
    EXPECT_NEAR(w.at(k)(1), 0.01 * 0.1 * (N - k), 1e-15);
  }
  EXPECT_TRUE(w.at(N).isZero(0.0));
  EXPECT_THROW(AssembleDisturbance(p.sys[0], {}, N), ParameterError);
  pj.u.pop_back();
  EXPECT_THROW(AssembleDisturbance(p.sys[0], {{1, pj}}, N), DimensionError);
}

TEST(Phases, FirstRoundAcceptsAndAppliesTheControlLaw) {
  const Pair& p = Coupled();
  const SubsystemModel& s = p.sys[0];
  const Vector x0 = Eigen::Vector2d(1.0, -0.5);
  const ControllerState cs = Initial(p, 0, x0);
  const Prediction pred = PhaseMain(cs, s, p.hz);
  const DisturbanceSequence w = NeighborPlan(p, 0, Eigen::Vector2d(-2.0, 0.8));
  const Vector x_meas = x0 + Eigen::Vector2d(0.0, 1e-3);
  const AncillaryOutcome out = PhaseAncillary(cs, s, p.hz, pred, w, x_meas);
  const StepRecord& r = out.record;
  EXPECT_TRUE(r.accepted);
  EXPECT_TRUE(r.new_feasible);
  EXPECT_EQ(r.e_hat, x_meas - x0);
  EXPECT_LE((out.u_apply - (r.u_bar0 + r.f_bar0 + r.mu)).lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_LE((out.next.x_bar - (s.A * x0 + s.B * pred.u[0])).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_LE((out.next.e_bar - (s.B * r.f_bar0 + w.at(0))).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_TRUE(out.next.stored_w == w.Tail());
  EXPECT_NEAR(out.next.v_star, r.v_hat - s.StageCost(Vector::Zero(2), r.f_bar0), 1e-15);
}

TEST(Phases, TiesAcceptAndLowerBoundsFallBack) {
  const Pair& p = Coupled();
  const SubsystemModel& s = p.sys[0];
  const Vector x0 = Eigen::Vector2d(1.0, -0.5);
  ControllerState cs = Initial(p, 0, x0);
  cs.e_bar = Eigen::Vector2d(2e-3, -1e-3);
  cs.stored_w = NeighborPlan(p, 0, Eigen::Vector2d(-1.9, 0.7));
  const Prediction pred = PhaseMain(cs, s, p.hz);
  const DisturbanceSequence w = NeighborPlan(p, 0, Eigen::Vector2d(-2.0, 0.8));
  const double v_new = SolveAncillary(s, cs.scalings, p.hz, cs.e_bar, w).cost;

  cs.v_star = v_new;
  const AncillaryOutcome tie = PhaseAncillary(cs, s, p.hz, pred, w, x0);
  EXPECT_TRUE(tie.record.accepted);

  cs.v_star = 0.5 * v_new;
  const AncillaryOutcome low = PhaseAncillary(cs, s, p.hz, pred, w, x0);
  EXPECT_FALSE(low.record.accepted);
  EXPECT_TRUE(low.record.new_feasible);
  EXPECT_TRUE(low.record.fallback_feasible);
  const double v_old = SolveAncillary(s, cs.scalings, p.hz, cs.e_bar, cs.stored_w).cost;
  EXPECT_EQ(low.record.v_hat, v_old);
  EXPECT_TRUE(low.next.stored_w == cs.stored_w.Tail());
  EXPECT_EQ(low.next.v_star, cs.v_star - s.StageCost(cs.e_bar, low.record.f_bar0));
  EXPECT_LE((low.next.e_bar - (s.A * cs.e_bar + s.B * low.record.f_bar0 + cs.stored_w.at(0)))
                .lpNorm<Eigen::Infinity>(),
            1e-15);
}

TEST(Phases, AreDeterministic) {
  const Pair& p = Coupled();
  const ControllerState cs = Initial(p, 1, Eigen::Vector2d(-2.0, 0.8));
  const Prediction pred = PhaseMain(cs, p.sys[1], p.hz);
  const DisturbanceSequence w = NeighborPlan(p, 1, Eigen::Vector2d(1.0, -0.5));
  const Vector x = Eigen::Vector2d(-2.0, 0.8005);
  const AncillaryOutcome a = PhaseAncillary(cs, p.sys[1], p.hz, pred, w, x);
  const AncillaryOutcome b = PhaseAncillary(cs, p.sys[1], p.hz, pred, w, x);
  EXPECT_EQ(a.u_apply, b.u_apply);
  EXPECT_EQ(a.next.e_bar, b.next.e_bar);
  EXPECT_EQ(a.next.v_star, b.next.v_star);
}

TEST(Phases, BothPlansInfeasibleIsAnError) {
  const Pair& p = Coupled();
  ControllerState cs = Initial(p, 0, Eigen::Vector2d(1.0, -0.5));
  cs.e_bar = Eigen::Vector2d(4.0, 4.0);  // far outside beta X
  const Prediction pred = PhaseMain(cs, p.sys[0], p.hz);
  const DisturbanceSequence w = NeighborPlan(p, 0, Eigen::Vector2d(-2.0, 0.8));
  try {
    PhaseAncillary(cs, p.sys[0], p.hz, pred, w, cs.x_bar);
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.kind(), InfeasibleError::Kind::kAncillary);
  }
}

TEST(Phases, NominalCostDecreasesByTheStageCost) {
  const Pair& p = Coupled();
  const SubsystemModel& s = p.sys[1];
  const ScalingConstants& sc = p.design[1].scalings;
  Vector x = Eigen::Vector2d(-2.0, 0.8);
  for (int k = 0; k < 15; ++k) {
    const Prediction now = SolveMain(s, sc, p.hz, x);
    x = s.A * x + s.B * now.u[0];
    const Prediction next = SolveMain(s, sc, p.hz, x);
    EXPECT_LE(next.cost - now.cost, -s.StageCost(now.x[0], now.u[0]) + 1e-6) << "step " << k;
  }
}

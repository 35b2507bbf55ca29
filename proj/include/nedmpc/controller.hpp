#pragma once

// Per-controller phases of one round of the distributed algorithm. Phases
// are pure: they take a controller state and return the next one.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nedmpc/model.hpp"
#include "nedmpc/ocp.hpp"
#include "nedmpc/rci.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

struct ControllerState {
  Vector x_bar;                 // nominal state
  Vector e_bar;                 // planned error
  DisturbanceSequence stored_w; // last accepted planned disturbance, shifted
  double v_star = kInf;         // cost bound for accepting a new plan
  ScalingConstants scalings;
  std::shared_ptr<const SelectionMap> mu;  // built from the unplanned set
};

/// x_bar = x0, e_bar = 0, stored_w = 0, V* = +inf.
inline ControllerState InitialControllerState(const SubsystemModel& sys,
                                              const Vector& x0, const Horizons& hz,
                                              const ScalingConstants& scalings,
                                              std::shared_ptr<const SelectionMap> mu) {
  RequireSameDim(x0.size(), sys.n(), "InitialControllerState");
  if (!mu) throw ParameterError("InitialControllerState: selection map missing");
  ControllerState cs;
  cs.x_bar = x0;
  cs.e_bar = Vector::Zero(sys.n());
  cs.stored_w = DisturbanceSequence::Zero(sys.n(), hz.N);
  cs.scalings = scalings;
  cs.mu = std::move(mu);
  return cs;
}

/// w(l) = sum_j A_ij x_j(l) + B_ij u_j(l), l = 0..N, with u_j(N) = 0.
inline DisturbanceSequence AssembleDisturbance(const SubsystemModel& sys,
                                               const std::map<int, Prediction>& preds,
                                               int N) {
  std::vector<Vector> w(N + 1, Vector::Zero(sys.n()));
  for (int j : sys.Neighbors()) {
    const auto it = preds.find(j);
    if (it == preds.end()) {
      throw ParameterError("subsystem " + std::to_string(sys.id) +
                           ": missing prediction from neighbor " + std::to_string(j));
    }
    const Prediction& p = it->second;
    if (static_cast<int>(p.x.size()) != N + 1 || static_cast<int>(p.u.size()) != N) {
      throw DimensionError("prediction from neighbor " + std::to_string(j) +
                           " has the wrong horizon");
    }
    const Coupling& c = sys.couplings.at(j);
    for (int l = 0; l < N; ++l) w[l] += c.A * p.x[l] + c.B * p.u[l];
  }
  // x_j(N) = 0 and u_j(N) = 0, so the last entry vanishes.
  w[N].setZero();
  return DisturbanceSequence(std::move(w));
}

/// Main phase: solve the main problem at the nominal state. The prediction
/// is also the message payload.
inline Prediction PhaseMain(const ControllerState& cs, const SubsystemModel& sys,
                            const Horizons& hz, const qp::SolverSettings& settings = {}) {
  return SolveMain(sys, cs.scalings, hz, cs.x_bar, settings);
}

struct StepRecord {
  int id = 0;
  bool accepted = false;           // new plan taken
  bool new_feasible = false;       // ancillary problem with the new plan
  bool fallback_feasible = false;  // ancillary problem with the stored plan
  double v_main = 0.0;
  double v_hat = 0.0;              // ancillary cost of the plan actually used
  double v_star = kInf;            // after the update
  double stage_cost_main = 0.0;    // l(x_bar, u_bar(0))
  Vector x;
  Vector x_bar;
  Vector e_bar;
  Vector e_hat;
  Vector u;
  Vector u_bar0;
  Vector f_bar0;
  Vector mu;
  bool mu_relaxed = false;
  double mu_residual = 0.0;
  Prediction prediction;
  DisturbanceSequence w_new;
};

struct AncillaryOutcome {
  Vector u_apply;
  ControllerState next;
  StepRecord record;
};

/// Ancillary phase. Accepts the new planned disturbance when its problem is
/// feasible and no costlier than V*, otherwise falls back to the stored
/// plan; then applies u = u_bar(0) + f_bar(0) + mu(e_hat) and advances the
/// controller memory.
inline AncillaryOutcome PhaseAncillary(const ControllerState& cs,
                                       const SubsystemModel& sys, const Horizons& hz,
                                       const Prediction& pred,
                                       const DisturbanceSequence& w_new,
                                       const Vector& x_meas,
                                       const qp::SolverSettings& settings = {}) {
  RequireSameDim(x_meas.size(), sys.n(), "PhaseAncillary");
  AncillaryOutcome out;
  StepRecord& rec = out.record;
  rec.id = sys.id;

  const auto fresh = TrySolveAncillary(sys, cs.scalings, hz, cs.e_bar, w_new, settings);
  rec.new_feasible = fresh.has_value();
  std::optional<AncillarySolution> used;
  const DisturbanceSequence* w_used = nullptr;
  double v_star = cs.v_star;
  if (fresh && fresh->cost <= cs.v_star) {
    rec.accepted = true;
    used = fresh;
    w_used = &w_new;
    v_star = fresh->cost;
  } else {
    used = TrySolveAncillary(sys, cs.scalings, hz, cs.e_bar, cs.stored_w, settings);
    rec.fallback_feasible = used.has_value();
    if (!used) {
      throw InfeasibleError(InfeasibleError::Kind::kAncillary,
                            "subsystem " + std::to_string(sys.id) +
                                ": ancillary problem infeasible for both the new "
                                "and the stored disturbance plan");
    }
    w_used = &cs.stored_w;
  }

  const Vector e_hat = x_meas - cs.x_bar - cs.e_bar;
  const Selection sel = (*cs.mu)(e_hat);
  const Vector& u_bar0 = pred.u.front();
  const Vector& f_bar0 = used->f.front();
  out.u_apply = u_bar0 + f_bar0 + sel.control;

  ControllerState& nx = out.next;
  nx.x_bar = sys.A * cs.x_bar + sys.B * u_bar0;
  nx.e_bar = sys.A * cs.e_bar + sys.B * f_bar0 + w_used->at(0);
  nx.stored_w = w_used->Tail();
  nx.v_star = v_star - sys.StageCost(cs.e_bar, f_bar0);  // inf stays inf
  nx.scalings = cs.scalings;
  nx.mu = cs.mu;

  rec.v_main = pred.cost;
  rec.v_hat = used->cost;
  rec.v_star = nx.v_star;
  rec.stage_cost_main = sys.StageCost(cs.x_bar, u_bar0);
  rec.x = x_meas;
  rec.x_bar = cs.x_bar;
  rec.e_bar = cs.e_bar;
  rec.e_hat = e_hat;
  rec.u = out.u_apply;
  rec.u_bar0 = u_bar0;
  rec.f_bar0 = f_bar0;
  rec.mu = sel.control;
  rec.mu_relaxed = sel.relaxed;
  rec.mu_residual = sel.residual;
  rec.prediction = pred;
  rec.w_new = w_new;
  return out;
}

}  // namespace nedmpc

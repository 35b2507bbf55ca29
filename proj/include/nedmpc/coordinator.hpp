#pragma once

// Round-synchronous execution of the distributed controllers against the
// stacked plant, plus a post-run audit of the closed-loop invariants.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "nedmpc/controller.hpp"
#include "nedmpc/model.hpp"
#include "nedmpc/ocp.hpp"
#include "nedmpc/rci.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

struct Message {
  int sender = 0;
  int round = 0;
  std::vector<Vector> x_seq;
  std::vector<Vector> u_seq;
};

/// In-process bus. A message from j reaches every i with i in N_j or j in
/// N_i.
class MessageBus {
 public:
  explicit MessageBus(const CoupledSystem& sys) : recipients_(sys.size()), inbox_(sys.size()) {
    for (int i = 0; i < sys.size(); ++i) {
      for (int j : sys[i].Neighbors()) {
        recipients_[j].insert(i);
        recipients_[i].insert(j);
      }
    }
  }

  const std::set<int>& Recipients(int sender) const { return recipients_.at(sender); }

  void Deliver(const Message& msg) {
    for (int i : recipients_.at(msg.sender)) inbox_[i][msg.sender] = msg;
  }

  /// Drains the inbox of `receiver`.
  std::map<int, Message> Collect(int receiver) {
    std::map<int, Message> out;
    out.swap(inbox_.at(receiver));
    return out;
  }

 private:
  std::vector<std::set<int>> recipients_;
  std::vector<std::map<int, Message>> inbox_;
};

struct PlantState {
  Vector x;  // stacked
  int t = 0;
};

struct RoundLog {
  int round = 0;
  Vector plant_x;
  Vector u_full;
  std::vector<StepRecord> records;
  double consistency = 0.0;  // worst local-vs-stacked successor mismatch
};

struct RoundResult {
  PlantState plant;
  std::vector<ControllerState> controllers;
  RoundLog log;
};

/// Builds the controller states from a design and a stacked initial state.
inline std::vector<ControllerState> InitialControllers(
    const CoupledSystem& sys, const std::vector<SubsystemDesign>& design,
    const Horizons& hz, const Vector& x0, const qp::SolverSettings& settings = {}) {
  RequireSameDim(static_cast<Index>(design.size()), sys.size(), "InitialControllers");
  RequireSameDim(x0.size(), sys.total_states(), "InitialControllers(x0)");
  std::vector<ControllerState> out;
  for (int i = 0; i < sys.size(); ++i) {
    out.push_back(InitialControllerState(
        sys[i], x0.segment(sys.state_offset(i), sys[i].n()), hz, design[i].scalings,
        std::make_shared<const SelectionMap>(design[i].hat, settings)));
  }
  return out;
}

/// One round: all main phases, message exchange, all ancillary phases, then
/// the plant update with the stacked model.
inline RoundResult RunRound(const CoupledSystem& sys, const Horizons& hz,
                            const PlantState& plant,
                            const std::vector<ControllerState>& controllers,
                            const qp::SolverSettings& settings = {}) {
  const int count = sys.size();
  RequireSameDim(static_cast<Index>(controllers.size()), count, "RunRound");
  RequireSameDim(plant.x.size(), sys.total_states(), "RunRound(plant)");
  const auto where = [&](int i) {
    return "round " + std::to_string(plant.t) + ", subsystem " + std::to_string(i) + ": ";
  };

  std::vector<Prediction> preds(count);
  for (int i = 0; i < count; ++i) {
    try {
      preds[i] = PhaseMain(controllers[i], sys[i], hz, settings);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(e.kind(), where(i) + e.what());
    } catch (const SolverError& e) {
      throw SolverError(where(i) + e.what());
    }
  }

  MessageBus bus(sys);
  for (int i = 0; i < count; ++i) {
    bus.Deliver(Message{i, plant.t, preds[i].x, preds[i].u});
  }

  RoundResult res;
  res.log.round = plant.t;
  res.log.plant_x = plant.x;
  res.log.u_full = Vector::Zero(sys.total_inputs());
  for (int i = 0; i < count; ++i) {
    std::map<int, Prediction> received;
    for (auto& [j, msg] : bus.Collect(i)) {
      if (msg.round != plant.t) throw SolverError(where(i) + "stale message");
      received[j] = Prediction{std::move(msg.x_seq), std::move(msg.u_seq), 0.0};
    }
    const DisturbanceSequence w_new = AssembleDisturbance(sys[i], received, hz.N);
    const Vector x_meas = plant.x.segment(sys.state_offset(i), sys[i].n());
    try {
      AncillaryOutcome step =
          PhaseAncillary(controllers[i], sys[i], hz, preds[i], w_new, x_meas, settings);
      res.log.u_full.segment(sys.input_offset(i), sys[i].m()) = step.u_apply;
      res.controllers.push_back(std::move(step.next));
      res.log.records.push_back(std::move(step.record));
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(e.kind(), where(i) + e.what());
    } catch (const SolverError& e) {
      throw SolverError(where(i) + e.what());
    }
  }

  res.plant.t = plant.t + 1;
  res.plant.x = sys.StackedA() * plant.x + sys.StackedB() * res.log.u_full;

  // The subsystem view of the same update.
  for (int i = 0; i < count; ++i) {
    const SubsystemModel& s = sys[i];
    const Vector xi = plant.x.segment(sys.state_offset(i), s.n());
    const Vector ui = res.log.u_full.segment(sys.input_offset(i), s.m());
    Vector wi = Vector::Zero(s.n());
    for (const auto& [j, c] : s.couplings) {
      wi += c.A * plant.x.segment(sys.state_offset(j), sys[j].n()) +
            c.B * res.log.u_full.segment(sys.input_offset(j), sys[j].m());
    }
    const Vector local = s.A * xi + s.B * ui + wi;
    const double gap =
        (local - res.plant.x.segment(sys.state_offset(i), s.n())).lpNorm<Eigen::Infinity>();
    res.log.consistency = std::max(res.log.consistency, gap);
    if (gap > 1e-12) {
      throw SolverError(where(i) + "local and stacked dynamics disagree by " +
                        std::to_string(gap));
    }
  }
  return res;
}

struct SimulationOptions {
  int steps = 300;
  double constraint_tol = 1e-9;
  qp::SolverSettings solver;
};

struct SimulationResult {
  bool passed = true;
  std::string failure;  // first violation or abort reason
  bool aborted = false;
  bool solver_failure = false;
  std::vector<RoundLog> logs;
  PlantState final_plant;
};

namespace internal {
inline double BoxMargin(const Box& b, const Vector& v) {
  return std::min((b.hi() - v).minCoeff(), (v - b.lo()).minCoeff());
}
}  // namespace internal

/// Closed loop for `options.steps` rounds. Constraint violations mark the
/// run failed (first one reported) but do not stop it; infeasibility and
/// solver failures abort.
inline SimulationResult RunSimulation(const CoupledSystem& sys,
                                      const std::vector<SubsystemDesign>& design,
                                      const Horizons& hz, const Vector& x0,
                                      const SimulationOptions& options = {}) {
  hz.Validate();
  SimulationResult out;
  PlantState plant{x0, 0};
  std::vector<ControllerState> ctrl =
      InitialControllers(sys, design, hz, x0, options.solver);
  const auto fail = [&](const std::string& why) {
    if (out.passed) out.failure = why;
    out.passed = false;
  };
  for (int k = 0; k < options.steps; ++k) {
    RoundResult r;
    try {
      r = RunRound(sys, hz, plant, ctrl, options.solver);
    } catch (const InfeasibleError& e) {
      fail(e.what());
      out.aborted = true;
      break;
    } catch (const SolverError& e) {
      fail(e.what());
      out.aborted = true;
      out.solver_failure = true;
      break;
    }
    for (int i = 0; i < sys.size(); ++i) {
      const StepRecord& rec = r.log.records[i];
      const std::string tag =
          "round " + std::to_string(k) + ", subsystem " + std::to_string(i) + ": ";
      if (internal::BoxMargin(sys[i].X, rec.x) < -options.constraint_tol) {
        fail(tag + "state constraint violated");
      }
      if (internal::BoxMargin(sys[i].U, rec.u) < -options.constraint_tol) {
        fail(tag + "input constraint violated");
      }
    }
    out.logs.push_back(std::move(r.log));
    plant = std::move(r.plant);
    ctrl = std::move(r.controllers);
  }
  out.final_plant = plant;
  return out;
}

/// Closed-loop invariant audit over a finished run.
struct AuditReport {
  int rounds = 0;
  int state_violations = 0;
  int input_violations = 0;
  int ehat_violations = 0;        // e_hat outside xi_x X
  int ebar_violations = 0;        // e_bar outside beta_x X
  int nominal_violations = 0;     // predictions outside alpha X
  int descent_violations = 0;
  int vstar_violations = 0;       // V* increased without an accept
  int relaxed_selections = 0;
  int plan_violations = 0;        // accepted planned disturbance outside W_bar
  int monotone_violations = 0;
  int split_violations = 0;
  int accepts = 0;
  int rejects = 0;
  double final_norm = kInf;
  double max_ehat_ratio = 0.0;    // gauge(e_hat) / xi_x
  double worst_descent = -kInf;   // max of dV + l
  double worst_consistency = 0.0;
  std::vector<std::string> messages;

  bool ok(double final_tol = 1e-2) const {
    return state_violations == 0 && input_violations == 0 && ehat_violations == 0 &&
           ebar_violations == 0 && nominal_violations == 0 &&
           descent_violations == 0 && vstar_violations == 0 &&
           relaxed_selections == 0 && plan_violations == 0 &&
           monotone_violations == 0 && split_violations == 0 &&
           final_norm <= final_tol;
  }
};

struct AuditOptions {
  double constraint_tol = 1e-9;
  double set_tol = 1e-7;          // solver-level slack on scaled boxes
  double descent_tol = 1e-6;
  double monotone_tol = 1e-6;
  double transient_fraction = 1.0 / 3.0;
  qp::SolverSettings solver;
};

inline AuditReport AuditRun(const CoupledSystem& sys,
                            const std::vector<SubsystemDesign>& design,
                            const Horizons& hz, const SimulationResult& run,
                            const AuditOptions& opt = {}) {
  AuditReport rep;
  rep.rounds = static_cast<int>(run.logs.size());
  rep.final_norm = run.final_plant.x.size() > 0
                       ? run.final_plant.x.lpNorm<Eigen::Infinity>()
                       : kInf;
  const int count = sys.size();
  const auto note = [&](const std::string& s) {
    if (rep.messages.size() < 20) rep.messages.push_back(s);
  };

  std::vector<ConvexSet> w_bar(count);
  std::map<int, double> ax, au;
  for (int j = 0; j < count; ++j) {
    ax[j] = design[j].scalings.alpha_x;
    au[j] = design[j].scalings.alpha_u;
  }
  for (int i = 0; i < count; ++i) w_bar[i] = CouplingDisturbanceSet(sys, i, ax, au);

  const int transient = static_cast<int>(std::ceil(opt.transient_fraction * rep.rounds));
  for (int k = 0; k < rep.rounds; ++k) {
    const RoundLog& lg = run.logs[k];
    rep.worst_consistency = std::max(rep.worst_consistency, lg.consistency);
    for (int i = 0; i < count; ++i) {
      const SubsystemModel& s = sys[i];
      const ScalingConstants& sc = design[i].scalings;
      const StepRecord& r = lg.records[i];
      const std::string tag =
          "round " + std::to_string(k) + ", subsystem " + std::to_string(i) + ": ";
      r.accepted ? ++rep.accepts : ++rep.rejects;

      if (internal::BoxMargin(s.X, r.x) < -opt.constraint_tol) {
        ++rep.state_violations;
        note(tag + "x outside X");
      }
      if (internal::BoxMargin(s.U, r.u) < -opt.constraint_tol) {
        ++rep.input_violations;
        note(tag + "u outside U");
      }
      if ((r.x - (r.x_bar + r.e_bar + r.e_hat)).lpNorm<Eigen::Infinity>() > 1e-12) {
        ++rep.split_violations;
        note(tag + "state split identity");
      }
      const double g = s.X.Gauge(r.e_hat);
      if (sc.xi_x > 0.0) rep.max_ehat_ratio = std::max(rep.max_ehat_ratio, g / sc.xi_x);
      if (g > sc.xi_x + opt.constraint_tol) {
        ++rep.ehat_violations;
        note(tag + "e_hat outside xi_x X");
      }
      if (s.X.Gauge(r.e_bar) > sc.beta_x + opt.set_tol) {
        ++rep.ebar_violations;
        note(tag + "e_bar outside beta_x X");
      }
      for (int l = 1; l < hz.N; ++l) {
        if (s.X.Gauge(r.prediction.x[l]) > sc.alpha_x + opt.set_tol) {
          ++rep.nominal_violations;
          note(tag + "nominal prediction outside alpha_x X");
          break;
        }
      }
      for (const Vector& u : r.prediction.u) {
        if (s.U.Gauge(u) > sc.alpha_u + opt.set_tol) {
          ++rep.nominal_violations;
          note(tag + "nominal input outside alpha_u U");
          break;
        }
      }
      if (r.mu_relaxed) {
        ++rep.relaxed_selections;
        note(tag + "selection map relaxed");
      }

      if (k + 1 < rep.rounds) {
        const StepRecord& nx = run.logs[k + 1].records[i];
        const double d = nx.v_main - r.v_main + r.stage_cost_main;
        rep.worst_descent = std::max(rep.worst_descent, d);
        if (d > opt.descent_tol) {
          ++rep.descent_violations;
          note(tag + "nominal cost descent");
        }
        // Between accepts V* only decreases.
        if (!nx.accepted && std::isfinite(r.v_star) && nx.v_star > r.v_star) {
          ++rep.vstar_violations;
          note(tag + "V* increased on a reject");
        }
        if (std::isfinite(nx.v_star) && nx.v_star < -opt.descent_tol) {
          ++rep.vstar_violations;
          note(tag + "V* negative");
        }
        if (k + 1 > transient) {
          const double xb0 = r.x_bar.lpNorm<Eigen::Infinity>();
          const double xb1 = nx.x_bar.lpNorm<Eigen::Infinity>();
          const double eb0 = r.e_bar.lpNorm<Eigen::Infinity>();
          const double eb1 = nx.e_bar.lpNorm<Eigen::Infinity>();
          if (xb1 > xb0 + opt.monotone_tol || eb1 > eb0 + opt.monotone_tol) {
            ++rep.monotone_violations;
            note(tag + "nominal state or planned error grew after the transient");
          }
        }
      }

      // Every stored plan is the tail of an accepted one, so checking the
      // accepted plans covers them. A plan entry is in W_bar when the
      // neighbor predictions that produced it lie in their alpha boxes;
      // otherwise fall back to an LP membership test.
      if (r.accepted) {
        const auto& w = r.w_new.entries();
        for (int l = 0; l + 1 < static_cast<int>(w.size()); ++l) {
          bool witness = true;
          for (int j : s.Neighbors()) {
            const StepRecord& rj = lg.records[j];
            const double tol = opt.constraint_tol;
            if (sys[j].X.Gauge(rj.prediction.x[l]) > ax[j] + tol ||
                sys[j].U.Gauge(rj.prediction.u[l]) > au[j] + tol) {
              witness = false;
              break;
            }
          }
          if (!witness && !ContainsPoint(w_bar[i], w[l], 1e-8, opt.solver)) {
            ++rep.plan_violations;
            note(tag + "planned disturbance outside W_bar at l = " + std::to_string(l));
          }
        }
        if (!w.back().isZero(0.0)) {
          ++rep.plan_violations;
          note(tag + "planned disturbance does not end at zero");
        }
      }
    }
  }
  return rep;
}

}  // namespace nedmpc

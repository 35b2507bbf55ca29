#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace nedmpc;

TEST(MessageBus, RecipientsAreTheSymmetricClosure) {
  const CoupledSystem sys = BuildSystem(fixtures::OneWayPairConfig());
  ASSERT_EQ(sys[0].Neighbors(), std::vector<int>{1});
  ASSERT_TRUE(sys[1].Neighbors().empty());
  MessageBus bus(sys);
  EXPECT_EQ(bus.Recipients(0), std::set<int>{1});
  EXPECT_EQ(bus.Recipients(1), std::set<int>{0});
  bus.Deliver(Message{0, 3, {}, {}});
  bus.Deliver(Message{1, 3, {}, {}});
  const auto in0 = bus.Collect(0);
  ASSERT_EQ(in0.size(), 1u);
  EXPECT_EQ(in0.at(1).round, 3);
  EXPECT_EQ(bus.Collect(1).size(), 1u);
  EXPECT_TRUE(bus.Collect(0).empty());  // drained

  const CoupledSystem lone = BuildSystem(fixtures::DecoupledConfig());
  MessageBus quiet(lone);
  EXPECT_TRUE(quiet.Recipients(0).empty());
}

TEST(Coordinator, DecoupledSystemsReproduceNominalMpc) {
  const Config c = fixtures::DecoupledConfig();
  const CoupledSystem sys = BuildSystem(c);
  const auto design = DesignScalings(sys, c.rci_h, c.weights, c.solver);
  for (const SubsystemDesign& d : design) {
    EXPECT_EQ(d.scalings.alpha_x, 1.0);
    EXPECT_EQ(d.scalings.xi_x, 0.0);
    EXPECT_EQ(d.scalings.beta_x, 0.0);
  }
  SimulationOptions opt;
  opt.steps = c.steps;
  const SimulationResult run = RunSimulation(sys, design, c.horizons, c.InitialState(), opt);
  ASSERT_TRUE(run.passed) << run.failure;
  ASSERT_EQ(static_cast<int>(run.logs.size()), c.steps);

  // Standalone nominal MPC on the full constraint sets.
  const ScalingConstants plain;
  for (int i = 0; i < sys.size(); ++i) {
    Vector x = c.subsystems[i].x0;
    for (int k = 0; k < c.steps; ++k) {
      const StepRecord& r = run.logs[k].records[i];
      ASSERT_LE((r.x - x).lpNorm<Eigen::Infinity>(), 1e-9) << "round " << k;
      const Prediction p = SolveMain(sys[i], plain, c.horizons, x);
      EXPECT_LE((r.u - p.u[0]).lpNorm<Eigen::Infinity>(), 1e-9) << "round " << k;
      EXPECT_TRUE(r.e_bar.isZero(0.0));
      EXPECT_TRUE(r.e_hat.isZero(1e-12));
      EXPECT_TRUE(r.mu.isZero(0.0));
      x = sys[i].A * x + sys[i].B * p.u[0];
    }
  }
}

TEST(Coordinator, TracesAreBitwiseReproducible) {
  const Config c = fixtures::CoupledPairConfig();
  const CoupledSystem sys = BuildSystem(c);
  const auto design = DesignScalings(sys, c.rci_h, c.weights, c.solver);
  SimulationOptions opt;
  opt.steps = 15;
  const SimulationResult a = RunSimulation(sys, design, c.horizons, c.InitialState(), opt);
  const SimulationResult b = RunSimulation(sys, design, c.horizons, c.InitialState(), opt);
  ASSERT_TRUE(a.passed) << a.failure;
  EXPECT_EQ(TraceCsv(sys, a.logs), TraceCsv(sys, b.logs));
}

TEST(Coordinator, CoupledPairPassesTheAudit) {
  const Config c = fixtures::CoupledPairConfig();
  const CoupledSystem sys = BuildSystem(c);
  const auto design = DesignScalings(sys, c.rci_h, c.weights, c.solver);
  SimulationOptions opt;
  opt.steps = c.steps;
  const SimulationResult run = RunSimulation(sys, design, c.horizons, c.InitialState(), opt);
  ASSERT_TRUE(run.passed) << run.failure;
  const AuditReport rep = AuditRun(sys, design, c.horizons, run);
  EXPECT_EQ(rep.state_violations, 0);
  EXPECT_EQ(rep.input_violations, 0);
  EXPECT_EQ(rep.ehat_violations, 0);
  EXPECT_EQ(rep.ebar_violations, 0);
  EXPECT_EQ(rep.nominal_violations, 0);
  EXPECT_EQ(rep.descent_violations, 0);
  EXPECT_EQ(rep.vstar_violations, 0);
  EXPECT_EQ(rep.relaxed_selections, 0);
  EXPECT_EQ(rep.plan_violations, 0);
  EXPECT_EQ(rep.split_violations, 0);
  // Not checked: monotone decay of the infinity norms. A double integrator
  // trades position for velocity, so the norms can rise by a few percent
  // late in the run even though the cost keeps falling.
  EXPECT_LE(rep.final_norm, 1e-6);
  EXPECT_LE(rep.worst_consistency, 1e-12);
  EXPECT_EQ(rep.rounds, c.steps);
}

TEST(Coordinator, TruckShortRun) {
  const Config c = TruckBenchmark();
  const CoupledSystem sys = BuildSystem(c);
  const auto design = DesignScalings(sys, c.rci_h, c.weights, c.solver);
  SimulationOptions opt;
  opt.steps = 20;
  const SimulationResult run = RunSimulation(sys, design, c.horizons, c.InitialState(), opt);
  ASSERT_TRUE(run.passed) << run.failure;
  AuditOptions ao;
  const AuditReport rep = AuditRun(sys, design, c.horizons, run, ao);
  EXPECT_EQ(rep.state_violations + rep.input_violations + rep.ehat_violations +
                rep.ebar_violations + rep.relaxed_selections + rep.descent_violations,
            0);
  EXPECT_GE(rep.accepts, sys.size());  // at least the first round
}

TEST(Coordinator, RejectsMismatchedInputs) {
  const Config c = fixtures::CoupledPairConfig();
  const CoupledSystem sys = BuildSystem(c);
  const auto design = DesignScalings(sys, c.rci_h, c.weights, c.solver);
  EXPECT_THROW(RunSimulation(sys, design, c.horizons, Vector::Zero(3)), DimensionError);
  EXPECT_THROW(RunSimulation(sys, design, Horizons{10, 10}, c.InitialState()), ParameterError);
}

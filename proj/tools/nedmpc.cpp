// Command line front end: design, simulate, verify.
//
// Exit codes: 0 pass, 1 invariant or constraint failure, 2 usage or
// configuration error, 3 solver failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nedmpc.hpp"

namespace {

using namespace nedmpc;

constexpr int kPass = 0;
constexpr int kViolation = 1;
constexpr int kUsage = 2;
constexpr int kSolver = 3;

struct Loaded {
  Config config;
  CoupledSystem sys;
};

Loaded Load(const std::string& path) {
  Loaded l;
  l.config = path == "truck" ? TruckBenchmark() : LoadConfig(path);
  l.sys = BuildSystem(l.config);
  return l;
}

std::vector<SubsystemDesign> GetDesign(const Loaded& l, const std::string& design_path) {
  if (!design_path.empty()) return LoadDesign(design_path, l.sys);
  return DesignScalings(l.sys, l.config.rci_h, l.config.weights, l.config.solver);
}

void PrintTable(const CoupledSystem& sys, const std::vector<SubsystemDesign>& design) {
  std::printf("%-8s", "");
  for (int i = 0; i < sys.size(); ++i) std::printf("%10s", sys[i].name.c_str());
  std::printf("\n");
  const auto row = [&](const char* label, auto get) {
    std::printf("%-8s", label);
    for (const SubsystemDesign& d : design) std::printf("%10.4f", get(d.scalings));
    std::printf("\n");
  };
  row("alpha_x", [](const ScalingConstants& s) { return s.alpha_x; });
  row("beta_x", [](const ScalingConstants& s) { return s.beta_x; });
  row("xi_x", [](const ScalingConstants& s) { return s.xi_x; });
  row("alpha_u", [](const ScalingConstants& s) { return s.alpha_u; });
  row("beta_u", [](const ScalingConstants& s) { return s.beta_u; });
  row("xi_u", [](const ScalingConstants& s) { return s.xi_u; });
  row("sum_x", [](const ScalingConstants& s) { return s.sum_x(); });
  row("sum_u", [](const ScalingConstants& s) { return s.sum_u(); });
}

int Design(const std::string& config_path, const std::string& out) {
  const Loaded l = Load(config_path);
  const auto design = DesignScalings(l.sys, l.config.rci_h, l.config.weights, l.config.solver);
  PrintTable(l.sys, design);
  if (!out.empty()) {
    WriteFile(out, SerializeDesign(design, l.config).dump(2) + "\n");
    std::cout << "design written to " << out << "\n";
  }
  for (const SubsystemDesign& d : design) {
    if (!d.scalings.Valid()) return kViolation;
  }
  return kPass;
}

void PrintAudit(const AuditReport& a) {
  std::cout << "rounds " << a.rounds << ", accepts " << a.accepts << ", rejects "
            << a.rejects << ", final |x| " << a.final_norm << ", max e_hat/xi "
            << a.max_ehat_ratio << "\n";
  std::cout << "violations: state " << a.state_violations << ", input "
            << a.input_violations << ", e_hat " << a.ehat_violations << ", e_bar "
            << a.ebar_violations << ", nominal " << a.nominal_violations
            << ", descent " << a.descent_violations << ", V* " << a.vstar_violations
            << ", relaxed " << a.relaxed_selections << ", plan " << a.plan_violations
            << ", monotone " << a.monotone_violations << ", split "
            << a.split_violations << "\n";
  for (const std::string& m : a.messages) std::cout << "  " << m << "\n";
}

// Runs the closed loop and the audit; returns the exit code.
int ClosedLoop(const Loaded& l, const std::vector<SubsystemDesign>& design, int steps,
               const std::string& out) {
  SimulationOptions opt;
  opt.steps = steps;
  opt.solver = l.config.solver;
  opt.constraint_tol = l.config.constraint_tol;
  const SimulationResult run =
      RunSimulation(l.sys, design, l.config.horizons, l.config.InitialState(), opt);
  if (!out.empty()) WriteFile(out, TraceCsv(l.sys, run.logs));
  AuditOptions aopt;
  aopt.constraint_tol = l.config.constraint_tol;
  aopt.solver = l.config.solver;
  const AuditReport audit = AuditRun(l.sys, design, l.config.horizons, run, aopt);
  PrintAudit(audit);
  if (run.solver_failure) {
    std::cout << "FAIL: " << run.failure << "\n";
    return kSolver;
  }
  // Convergence is only demanded of full-length runs.
  const bool ok = run.passed && audit.ok(steps >= l.config.steps ? 1e-2 : kInf);
  std::cout << (ok ? "PASS" : "FAIL") << (run.failure.empty() ? "" : ": " + run.failure)
            << "\n";
  return ok ? kPass : kViolation;
}

int Simulate(const std::string& config_path, std::optional<int> steps,
             const std::string& out, const std::string& design_path) {
  const Loaded l = Load(config_path);
  const auto design = GetDesign(l, design_path);
  return ClosedLoop(l, design, steps.value_or(l.config.steps), out);
}

int Verify(const std::string& config_path, int samples, std::optional<unsigned> seed,
           const std::string& design_path, std::optional<int> steps) {
  const Loaded l = Load(config_path);
  const auto design = GetDesign(l, design_path);
  const unsigned s = seed.value_or(l.config.seed);
  bool ok = true;
  for (int i = 0; i < l.sys.size(); ++i) {
    const SubsystemModel& m = l.sys[i];
    const SubsystemDesign& d = design[i];
    if (!d.scalings.Valid(1e-12)) {
      std::cout << m.name << ": scaling constants violate their bounds\n";
      ok = false;
    }
    for (const auto& [label, rd] : {std::pair{"W", &d.full}, std::pair{"W_hat", &d.hat}}) {
      const RciReport r = VerifyRci(*rd, m.X, m.U, samples, s + i, 3, l.config.solver);
      std::cout << m.name << " " << label << ": deadbeat " << r.deadbeat_residual
                << ", state containment " << r.state_containment
                << ", input containment " << r.input_containment << ", sample input "
                << r.sample_input_violation << ", invariance " << r.invariance_residual
                << ", relaxed " << r.relaxed_selections << ", lp failures "
                << r.lp_membership_failures << (r.ok() ? "  ok" : "  VIOLATION") << "\n";
      ok = ok && r.ok();
    }
  }
  const int loop = ClosedLoop(l, design, steps.value_or(l.config.steps), "");
  if (loop == kSolver) return kSolver;
  ok = ok && loop == kPass;
  std::cout << (ok ? "VERIFY PASS" : "VERIFY FAIL") << "\n";
  return ok ? kPass : kViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested distributed MPC: design, closed-loop simulation, verification"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::string design_path;
  std::optional<int> steps;
  int samples = 1000;
  std::optional<unsigned> seed;

  const std::string config_help = "configuration JSON file, or 'truck' for the built-in benchmark";
  auto* design = app.add_subcommand("design", "compute scaling constants and gains");
  design->add_option("config", config, config_help)->required();
  design->add_option("--out", out, "write the design JSON here");

  auto* simulate = app.add_subcommand("simulate", "run the closed loop");
  simulate->add_option("config", config, config_help)->required();
  simulate->add_option("--steps", steps, "number of rounds")->check(CLI::NonNegativeNumber);
  simulate->add_option("--out", out, "write the CSV trace here");
  simulate->add_option("--design", design_path, "use this design instead of recomputing");

  auto* verify = app.add_subcommand("verify", "certify the invariant sets and audit the closed loop");
  verify->add_option("config", config, config_help)->required();
  verify->add_option("--samples", samples, "sample points per invariant set")
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed", seed, "sampling seed");
  verify->add_option("--design", design_path, "use this design instead of recomputing");
  verify->add_option("--steps", steps, "number of closed-loop rounds")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    if (*design) return Design(config, out);
    if (*simulate) return Simulate(config, steps, out, design_path);
    if (*verify) return Verify(config, samples, seed, design_path, steps);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kViolation;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

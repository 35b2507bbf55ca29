#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "fixtures.hpp"

using namespace nedmpc;
namespace fs = std::filesystem;

namespace {

fs::path Scratch() {
  const fs::path dir = fs::temp_directory_path() / "nedmpc_cli_tests";
  fs::create_directories(dir);
  return dir;
}

int RunCli(const std::string& args) {
  const std::string cmd = std::string(NEDMPC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string WritePairConfig() {
  const fs::path p = Scratch() / "pair.json";
  WriteFile(p.string(), SerializeConfig(fixtures::CoupledPairConfig()).dump(2));
  return p.string();
}

}  // namespace

TEST(Config, RoundTrip) {
  const Config a = TruckBenchmark();
  const Config b = ParseConfig(SerializeConfig(a));
  EXPECT_EQ(SerializeConfig(b), SerializeConfig(a));
  EXPECT_TRUE(b.continuous);
  EXPECT_EQ(b.horizons.N, 25);
  EXPECT_EQ(b.horizons.H, 26);
  EXPECT_EQ(b.InitialState(), a.InitialState());
}

TEST(Config, RejectsEqualHorizons) {
  Json j = SerializeConfig(fixtures::DecoupledConfig());
  j["horizons"]["H"] = j["horizons"]["N"];
  EXPECT_THROW(ParseConfig(j), ConfigError);
}

TEST(Config, MissingFieldIsNamed) {
  Json j = SerializeConfig(fixtures::DecoupledConfig());
  j["subsystems"][1].erase("Q_diag");
  try {
    ParseConfig(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("subsystems[1]"), std::string::npos) << what;
    EXPECT_NE(what.find("Q_diag"), std::string::npos) << what;
  }
  Json k = SerializeConfig(fixtures::DecoupledConfig());
  k["subsystems"][0]["A"] = Json::array({Json::array({1.0, 0.0}), Json::array({1.0})});
  EXPECT_THROW(ParseConfig(k), ConfigError);
}

TEST(Discretize, DoubleIntegratorClosedForm) {
  const double ts = 0.3;
  const auto [Ad, Bd] =
      DiscretizeZoh(Matrix{{0.0, 1.0}, {0.0, 0.0}}, Matrix{{0.0}, {1.0}}, ts);
  EXPECT_LE((Ad - Matrix{{1.0, ts}, {0.0, 1.0}}).lpNorm<Eigen::Infinity>(), 1e-14);
  EXPECT_LE((Bd - Matrix{{0.5 * ts * ts}, {ts}}).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(Discretize, ScalarDecay) {
  for (double ts : {0.1, 1.0, 2.5}) {
    const auto [Ad, Bd] = DiscretizeZoh(-Matrix::Ones(1, 1), Matrix::Ones(1, 1), ts);
    EXPECT_NEAR(Ad(0, 0), std::exp(-ts), 1e-14);
    EXPECT_NEAR(Bd(0, 0), 1.0 - std::exp(-ts), 1e-14);
  }
  EXPECT_THROW(DiscretizeZoh(Matrix::Ones(1, 1), Matrix::Ones(1, 1), 0.0), ParameterError);
}

TEST(Discretize, TruckCouplingsMatchTheStackedExponential) {
  const Config c = TruckBenchmark();
  const CoupledSystem sys = BuildSystem(c);
  Config cont = c;
  cont.continuous = false;
  const CoupledSystem raw = BuildSystem(cont);
  const auto [Ad, Bd] = DiscretizeZoh(raw.StackedA(), raw.StackedB(), c.ts);
  EXPECT_LE((sys.StackedA() - Ad).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_LE((sys.StackedB() - Bd).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(DesignFile, RoundTrip) {
  const Config c = fixtures::CoupledPairConfig();
  const CoupledSystem sys = BuildSystem(c);
  const auto design = DesignScalings(sys, c.rci_h, c.weights, c.solver);
  const auto back = ParseDesign(ParseJsonText(SerializeDesign(design, c).dump(), "d"), sys);
  ASSERT_EQ(back.size(), design.size());
  for (std::size_t i = 0; i < design.size(); ++i) {
    EXPECT_EQ(back[i].scalings.alpha_x, design[i].scalings.alpha_x);
    EXPECT_EQ(back[i].scalings.xi_u, design[i].scalings.xi_u);
    EXPECT_EQ(back[i].full.eta, design[i].full.eta);
    EXPECT_EQ(back[i].hat.eta, design[i].hat.eta);
    for (int l = 0; l < c.rci_h; ++l) EXPECT_EQ(back[i].full.M[l], design[i].full.M[l]);
  }
  Json bad = SerializeDesign(design, c);
  bad["subsystems"][0]["alpha_x"] = 1.5;
  EXPECT_THROW(ParseDesign(bad, sys), ConfigError);
}

TEST(Trace, HeaderAndRows) {
  const Config c = fixtures::CoupledPairConfig();
  const CoupledSystem sys = BuildSystem(c);
  const auto design = DesignScalings(sys, c.rci_h, c.weights, c.solver);
  SimulationOptions opt;
  opt.steps = 3;
  const SimulationResult run = RunSimulation(sys, design, c.horizons, c.InitialState(), opt);
  const std::string csv = TraceCsv(sys, run.logs);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "t,subsystem,x0,x1,x_bar0,x_bar1,e_bar0,e_bar1,e_hat0,e_hat1,u0,u_bar0_0,"
            "f_bar0_0,mu0,V_main,V_hat,V_star,accepted,fallback,new_feasible,"
            "fallback_feasible,mu_relaxed,state_margin,input_margin");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 2);
  EXPECT_EQ(FormatDouble(0.1), "0.1");
  EXPECT_EQ(std::stod(FormatDouble(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(RunCli(""), 2);
  EXPECT_EQ(RunCli("frobnicate"), 2);
  EXPECT_EQ(RunCli("simulate /nonexistent/config.json"), 2);
  EXPECT_EQ(RunCli("simulate truck --steps -3"), 2);
}

TEST(Cli, DesignAndShortSimulation) {
  const std::string cfg = WritePairConfig();
  const fs::path design = Scratch() / "pair_design.json";
  const fs::path trace = Scratch() / "pair_trace.csv";
  ASSERT_EQ(RunCli("design " + cfg + " --out " + design.string()), 0);
  EXPECT_TRUE(fs::exists(design));
  EXPECT_EQ(RunCli("simulate " + cfg + " --steps 4 --design " + design.string() + " --out " +
                   trace.string()),
            0);
  EXPECT_GT(fs::file_size(trace), 0u);
}

TEST(Cli, TamperedDesignFailsVerification) {
  const std::string cfg = WritePairConfig();
  const Config c = fixtures::CoupledPairConfig();
  const CoupledSystem sys = BuildSystem(c);
  Json d = SerializeDesign(DesignScalings(sys, c.rci_h, c.weights, c.solver), c);
  // Keep the sums at one but claim a smaller invariant set than the gains give.
  const double xi = d["subsystems"][0]["xi_x"].get<double>();
  d["subsystems"][0]["xi_x"] = 0.5 * xi;
  d["subsystems"][0]["beta_x"] = d["subsystems"][0]["beta_x"].get<double>() + 0.5 * xi;
  const fs::path path = Scratch() / "tampered.json";
  WriteFile(path.string(), d.dump(2));
  EXPECT_EQ(RunCli("verify " + cfg + " --samples 20 --steps 3 --design " + path.string()), 1);
}

#pragma once

#include <random>
#include <vector>

#include "nedmpc.hpp"

namespace fixtures {

using nedmpc::Matrix;
using nedmpc::Vector;

/// Sampled double integrator with |x| <= (5, 5), |u| <= 1, unit weights.
inline nedmpc::SubsystemConfig DoubleIntegrator(const std::string& name, double ts,
                                                const Vector& x0) {
  nedmpc::SubsystemConfig s;
  s.name = name;
  s.A = Matrix{{1.0, ts}, {0.0, 1.0}};
  s.B = Matrix{{0.5 * ts * ts}, {ts}};
  s.x_lo = Eigen::Vector2d(-5.0, -5.0);
  s.x_hi = Eigen::Vector2d(5.0, 5.0);
  s.u_lo = Vector::Constant(1, -1.0);
  s.u_hi = Vector::Constant(1, 1.0);
  s.q_diag = Vector::Ones(2);
  s.r_diag = Vector::Ones(1);
  s.x0 = x0;
  return s;
}

/// Two double integrators without any coupling.
inline nedmpc::Config DecoupledConfig() {
  nedmpc::Config c;
  c.name = "decoupled_pair";
  c.horizons = {10, 11};
  c.rci_h = 4;
  c.steps = 40;
  c.subsystems.push_back(DoubleIntegrator("left", 0.5, Eigen::Vector2d(1.0, -0.5)));
  c.subsystems.push_back(DoubleIntegrator("right", 0.5, Eigen::Vector2d(-2.0, 0.8)));
  return c;
}

/// Two double integrators with a weak velocity coupling, 1 -> 0 only, so
/// the neighbor graph is not symmetric.
inline nedmpc::Config OneWayPairConfig() {
  nedmpc::Config c = DecoupledConfig();
  c.name = "one_way_pair";
  nedmpc::CouplingConfig cp;
  cp.i = 0;
  cp.j = 1;
  cp.A = Matrix{{0.0, 0.0}, {0.0, 0.02}};
  cp.B = Matrix::Zero(2, 1);
  c.couplings.push_back(cp);
  return c;
}

/// Symmetric weak coupling through both positions.
inline nedmpc::Config CoupledPairConfig() {
  nedmpc::Config c = DecoupledConfig();
  c.name = "coupled_pair";
  for (const auto& [i, j] : {std::pair{0, 1}, std::pair{1, 0}}) {
    nedmpc::CouplingConfig cp;
    cp.i = i;
    cp.j = j;
    cp.A = Matrix{{0.0, 0.0}, {0.01, 0.0}};
    cp.B = Matrix::Zero(2, 1);
    c.couplings.push_back(cp);
  }
  return c;
}

inline Vector RandomUnit(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> nd;
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = nd(rng);
  return d.normalized();
}

}  // namespace fixtures

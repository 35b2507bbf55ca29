#pragma once

// CSV trace: one row per (round, subsystem). Numbers use the shortest
// representation that parses back to the same double.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "nedmpc/coordinator.hpp"
#include "nedmpc/model.hpp"

namespace nedmpc {

inline std::string FormatDouble(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Columns are sized for the largest subsystem; smaller ones leave the
/// extra cells empty.
inline std::string TraceCsv(const CoupledSystem& sys, const std::vector<RoundLog>& logs) {
  Index nx = 0, nu = 0;
  for (const SubsystemModel& s : sys.subsystems()) {
    nx = std::max(nx, s.n());
    nu = std::max(nu, s.m());
  }
  std::string out = "t,subsystem";
  const auto header = [&](const char* name, Index count) {
    for (Index k = 0; k < count; ++k) {
      out += ',';
      out += name;
      out += std::to_string(k);
    }
  };
  header("x", nx);
  header("x_bar", nx);
  header("e_bar", nx);
  header("e_hat", nx);
  header("u", nu);
  header("u_bar0_", nu);
  header("f_bar0_", nu);
  header("mu", nu);
  out +=
      ",V_main,V_hat,V_star,accepted,fallback,new_feasible,fallback_feasible,"
      "mu_relaxed,state_margin,input_margin\n";

  const auto cells = [&](const Vector& v, Index count) {
    for (Index k = 0; k < count; ++k) {
      out += ',';
      if (k < v.size()) out += FormatDouble(v(k));
    }
  };
  for (const RoundLog& lg : logs) {
    for (const StepRecord& r : lg.records) {
      const SubsystemModel& s = sys[r.id];
      out += std::to_string(lg.round);
      out += ',';
      out += std::to_string(r.id);
      cells(r.x, nx);
      cells(r.x_bar, nx);
      cells(r.e_bar, nx);
      cells(r.e_hat, nx);
      cells(r.u, nu);
      cells(r.u_bar0, nu);
      cells(r.f_bar0, nu);
      cells(r.mu, nu);
      for (double v : {r.v_main, r.v_hat, r.v_star}) {
        out += ',';
        out += FormatDouble(v);
      }
      for (bool b : {r.accepted, !r.accepted, r.new_feasible, r.fallback_feasible,
                     r.mu_relaxed}) {
        out += b ? ",1" : ",0";
      }
      out += ',';
      out += FormatDouble(internal::BoxMargin(s.X, r.x));
      out += ',';
      out += FormatDouble(internal::BoxMargin(s.U, r.u));
      out += '\n';
    }
  }
  return out;
}

}  // namespace nedmpc

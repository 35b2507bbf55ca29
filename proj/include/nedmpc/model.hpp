#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "nedmpc/set_geometry.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

/// Influence of subsystem j on subsystem i: A_ij x_j + B_ij u_j.
struct Coupling {
  Matrix A;  // n_i x n_j
  Matrix B;  // n_i x m_j

  bool IsZero() const {
    return (A.size() == 0 || A.isZero(0.0)) && (B.size() == 0 || B.isZero(0.0));
  }
};

struct SubsystemModel {
  int id = 0;
  std::string name;
  Matrix A;  // A_ii
  Matrix B;  // B_ii
  std::map<int, Coupling> couplings;
  Box X;
  Box U;
  Matrix Q;
  Matrix R;

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }

  /// Ids j != i with a nonzero coupling block.
  std::vector<int> Neighbors() const {
    std::vector<int> out;
    for (const auto& [j, c] : couplings) {
      if (j != id && !c.IsZero()) out.push_back(j);
    }
    return out;
  }

  /// Stage cost 1/2 (x'Qx + u'Ru).
  double StageCost(const Vector& x, const Vector& u) const {
    return 0.5 * (x.dot(Q * x) + u.dot(R * u));
  }
};

inline Index ControllabilityRank(const Matrix& A, const Matrix& B) {
  const Index n = A.rows();
  Matrix C(n, n * B.cols());
  Matrix block = B;
  for (Index k = 0; k < n; ++k) {
    C.middleCols(k * B.cols(), B.cols()) = block;
    block = A * block;
  }
  Eigen::FullPivLU<Matrix> lu(C);
  lu.setThreshold(1e-10);
  return lu.rank();
}

inline bool IsPositiveDefinite(const Matrix& M) {
  if (M.rows() != M.cols()) return false;
  if (!M.isApprox(M.transpose(), 1e-12) && !(M - M.transpose()).isZero(1e-12)) {
    return false;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > 0.0;
}

/// Checks shapes, controllability of (A_ii, B_ii), and definiteness of Q, R.
inline void ValidateSubsystem(const SubsystemModel& s) {
  const std::string tag = "subsystem " + std::to_string(s.id) + ": ";
  if (s.A.rows() != s.A.cols()) throw DimensionError(tag + "A must be square");
  if (s.B.rows() != s.n()) throw DimensionError(tag + "B row count");
  if (s.X.dim() != s.n()) throw DimensionError(tag + "X dimension");
  if (s.U.dim() != s.m()) throw DimensionError(tag + "U dimension");
  if (s.Q.rows() != s.n() || s.R.rows() != s.m()) {
    throw DimensionError(tag + "cost weight dimension");
  }
  if (ControllabilityRank(s.A, s.B) != s.n()) {
    throw ParameterError(tag + "(A_ii, B_ii) is not controllable");
  }
  if (!IsPositiveDefinite(s.Q) || !IsPositiveDefinite(s.R)) {
    throw ParameterError(tag + "Q and R must be symmetric positive definite");
  }
}

/// A plant partitioned into subsystems; ids are the positions 0..M-1.
class CoupledSystem {
 public:
  CoupledSystem() = default;
  explicit CoupledSystem(std::vector<SubsystemModel> subs)
      : subs_(std::move(subs)) {
    for (std::size_t i = 0; i < subs_.size(); ++i) {
      if (subs_[i].id != static_cast<int>(i)) {
        throw ParameterError("CoupledSystem: subsystem ids must be 0..M-1 in order");
      }
    }
    for (const SubsystemModel& s : subs_) {
      for (const auto& [j, c] : s.couplings) {
        if (j < 0 || j >= size() || j == s.id) {
          throw ParameterError("subsystem " + std::to_string(s.id) +
                               ": coupling to unknown neighbor id " +
                               std::to_string(j));
        }
        if (c.A.rows() != s.n() || c.A.cols() != subs_[j].n() ||
            c.B.rows() != s.n() || c.B.cols() != subs_[j].m()) {
          throw DimensionError("coupling block shape for (" +
                               std::to_string(s.id) + ", " + std::to_string(j) + ")");
        }
      }
    }
  }

  int size() const { return static_cast<int>(subs_.size()); }
  const SubsystemModel& operator[](int i) const { return subs_.at(i); }
  SubsystemModel& operator[](int i) { return subs_.at(i); }
  const std::vector<SubsystemModel>& subsystems() const { return subs_; }

  Index state_offset(int i) const {
    Index off = 0;
    for (int k = 0; k < i; ++k) off += subs_[k].n();
    return off;
  }
  Index input_offset(int i) const {
    Index off = 0;
    for (int k = 0; k < i; ++k) off += subs_[k].m();
    return off;
  }
  Index total_states() const { return state_offset(size()); }
  Index total_inputs() const { return input_offset(size()); }

  Matrix StackedA() const {
    Matrix A = Matrix::Zero(total_states(), total_states());
    for (const SubsystemModel& s : subs_) {
      const Index r = state_offset(s.id);
      A.block(r, r, s.n(), s.n()) = s.A;
      for (const auto& [j, c] : s.couplings) {
        A.block(r, state_offset(j), s.n(), subs_[j].n()) = c.A;
      }
    }
    return A;
  }

  Matrix StackedB() const {
    Matrix B = Matrix::Zero(total_states(), total_inputs());
    for (const SubsystemModel& s : subs_) {
      const Index r = state_offset(s.id);
      B.block(r, input_offset(s.id), s.n(), s.m()) = s.B;
      for (const auto& [j, c] : s.couplings) {
        B.block(r, input_offset(j), s.n(), subs_[j].m()) = c.B;
      }
    }
    return B;
  }

  /// Replaces every dynamic block by the partition of stacked (A, B);
  /// all-zero coupling blocks are dropped.
  void SetStackedDynamics(const Matrix& A, const Matrix& B) {
    RequireSameDim(A.rows(), total_states(), "SetStackedDynamics");
    RequireSameDim(B.cols(), total_inputs(), "SetStackedDynamics");
    for (SubsystemModel& s : subs_) {
      const Index r = state_offset(s.id);
      s.A = A.block(r, r, s.n(), s.n());
      s.B = B.block(r, input_offset(s.id), s.n(), s.m());
      s.couplings.clear();
      for (const SubsystemModel& o : subs_) {
        if (o.id == s.id) continue;
        Coupling c{A.block(r, state_offset(o.id), s.n(), o.n()),
                   B.block(r, input_offset(o.id), s.n(), o.m())};
        if (!c.IsZero()) s.couplings.emplace(o.id, std::move(c));
      }
    }
  }

 private:
  std::vector<SubsystemModel> subs_;
};

/// Minkowski sum over neighbors j of  sx_j A_ij X_j  +  su_j B_ij U_j.
/// Scalings of 1 give the full interaction set, alpha_j the planned part,
/// 1 - alpha_j the unplanned part.
inline ConvexSet CouplingDisturbanceSet(const CoupledSystem& sys, int i,
                                        const std::map<int, double>& state_scalings,
                                        const std::map<int, double>& input_scalings) {
  if (i < 0 || i >= sys.size()) {
    throw ParameterError("CouplingDisturbanceSet: unknown subsystem id " +
                         std::to_string(i));
  }
  const SubsystemModel& s = sys[i];
  ConvexSet out = ConvexSet::Origin(s.n());
  for (int j : s.Neighbors()) {
    const auto sx = state_scalings.find(j);
    const auto su = input_scalings.find(j);
    if (sx == state_scalings.end() || su == input_scalings.end()) {
      throw ParameterError("CouplingDisturbanceSet: no scaling for neighbor " +
                           std::to_string(j) + " of subsystem " + std::to_string(i));
    }
    const Coupling& c = s.couplings.at(j);
    const ConvexSet xs =
        Scale(LinearImage(c.A, ConvexSet::FromBox(sys[j].X)), sx->second);
    const ConvexSet us =
        Scale(LinearImage(c.B, ConvexSet::FromBox(sys[j].U)), su->second);
    out = MinkowskiSum(MinkowskiSum(out, xs), us);
  }
  return out;
}

/// Same scaling for every subsystem.
inline std::map<int, double> UniformScalings(const CoupledSystem& sys, double a) {
  std::map<int, double> out;
  for (int j = 0; j < sys.size(); ++j) out[j] = a;
  return out;
}

}  // namespace nedmpc

#pragma once

#include <utility>

#include <unsupported/Eigen/MatrixFunctions>

#include "nedmpc/model.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

/// Zero-order-hold discretization of x' = Ax + Bu with sample time ts.
///
///   exp([A B; 0 0] ts) = [A_d B_d; 0 I]
inline std::pair<Matrix, Matrix> DiscretizeZoh(const Matrix& A, const Matrix& B,
                                               double ts) {
  if (!(ts > 0.0)) throw ParameterError("DiscretizeZoh: ts must be positive");
  RequireSameDim(A.rows(), A.cols(), "DiscretizeZoh(A square)");
  RequireSameDim(B.rows(), A.rows(), "DiscretizeZoh(B rows)");
  const Index n = A.rows();
  const Index m = B.cols();
  Matrix M = Matrix::Zero(n + m, n + m);
  M.topLeftCorner(n, n) = A * ts;
  M.topRightCorner(n, m) = B * ts;
  const Matrix phi = M.exp();
  return {phi.topLeftCorner(n, n), phi.topRightCorner(n, m)};
}

/// Discretizes the full stacked system, so that coupling blocks are
/// consistent with the local ones, and repartitions it. Couplings that are
/// zero in continuous time may become nonzero.
inline CoupledSystem DiscretizeSystem(const CoupledSystem& continuous, double ts) {
  auto [Ad, Bd] = DiscretizeZoh(continuous.StackedA(), continuous.StackedB(), ts);
  CoupledSystem out = continuous;
  out.SetStackedDynamics(Ad, Bd);
  return out;
}

}  // namespace nedmpc

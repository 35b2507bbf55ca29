#pragma once

// Brute-force references used by the tests. They share no code with the
// solver: dense Eigen factorizations over enumerated active sets.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Result {
  Vector z;
  double objective = std::numeric_limits<double>::infinity();
};

// Calls f on every k-subset of {0..n-1}.
inline void ForEachSubset(int n, int k, const std::function<void(const std::vector<int>&)>& f) {
  if (k < 0 || k > n) return;
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    f(idx);
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

/// Strictly convex QP  min 1/2 z'Pz + q'z  s.t. Aeq z = beq, G z <= h, by
/// enumerating active sets. Returns nullopt when infeasible.
inline std::optional<Result> ActiveSetQp(const Matrix& P, const Vector& q, const Matrix& Aeq,
                                         const Vector& beq, const Matrix& G, const Vector& h,
                                         double tol = 1e-9) {
  const int n = static_cast<int>(q.size());
  const int p = static_cast<int>(Aeq.rows());
  const int m = static_cast<int>(G.rows());
  std::optional<Result> best;
  for (int k = 0; k <= std::min(m, n - p); ++k) {
    ForEachSubset(m, k, [&](const std::vector<int>& act) {
      const int r = p + k;
      Matrix C(r, n);
      Vector d(r);
      if (p > 0) {
        C.topRows(p) = Aeq;
        d.head(p) = beq;
      }
      for (int i = 0; i < k; ++i) {
        C.row(p + i) = G.row(act[i]);
        d(p + i) = h(act[i]);
      }
      Matrix K = Matrix::Zero(n + r, n + r);
      K.topLeftCorner(n, n) = P;
      K.topRightCorner(n, r) = C.transpose();
      K.bottomLeftCorner(r, n) = C;
      Vector rhs(n + r);
      rhs << -q, d;
      Eigen::FullPivLU<Matrix> lu(K);
      if (lu.rank() < n + r) return;
      const Vector sol = lu.solve(rhs);
      const Vector z = sol.head(n);
      if (m > 0 && (G * z - h).maxCoeff() > tol) return;
      for (int i = 0; i < k; ++i) {
        if (sol(n + p + i) < -tol) return;
      }
      const double obj = 0.5 * z.dot(P * z) + q.dot(z);
      if (!best || obj < best->objective) best = Result{z, obj};
    });
  }
  return best;
}

/// Bounded LP  min c'z  s.t. Aeq z = beq, G z <= h, by enumerating
/// vertices. Returns nullopt when infeasible.
inline std::optional<Result> VertexLp(const Vector& c, const Matrix& Aeq, const Vector& beq,
                                      const Matrix& G, const Vector& h, double tol = 1e-9) {
  const int n = static_cast<int>(c.size());
  const int p = static_cast<int>(Aeq.rows());
  const int m = static_cast<int>(G.rows());
  std::optional<Result> best;
  ForEachSubset(m, n - p, [&](const std::vector<int>& act) {
    Matrix C(n, n);
    Vector d(n);
    if (p > 0) {
      C.topRows(p) = Aeq;
      d.head(p) = beq;
    }
    for (int i = 0; i < n - p; ++i) {
      C.row(p + i) = G.row(act[i]);
      d(p + i) = h(act[i]);
    }
    Eigen::FullPivLU<Matrix> lu(C);
    if (lu.rank() < n) return;
    const Vector z = lu.solve(d);
    if (p > 0 && (Aeq * z - beq).lpNorm<Eigen::Infinity>() > tol) return;
    if ((G * z - h).maxCoeff() > tol) return;
    const double obj = c.dot(z);
    if (!best || obj < best->objective) best = Result{z, obj};
  });
  return best;
}

/// Equality-constrained QP by one KKT solve.
inline Result KktSolve(const Matrix& P, const Vector& q, const Matrix& Aeq, const Vector& beq) {
  const Eigen::Index n = q.size();
  const Eigen::Index p = Aeq.rows();
  Matrix K = Matrix::Zero(n + p, n + p);
  K.topLeftCorner(n, n) = P;
  K.topRightCorner(n, p) = Aeq.transpose();
  K.bottomLeftCorner(p, n) = Aeq;
  Vector rhs(n + p);
  rhs << -q, beq;
  const Vector sol = K.fullPivLu().solve(rhs);
  Result r;
  r.z = sol.head(n);
  r.objective = 0.5 * r.z.dot(P * r.z) + q.dot(r.z);
  return r;
}

/// Random strictly convex QP with a box and a few general rows; always
/// feasible, since a random interior point satisfies every row strictly.
struct RandomQp {
  Matrix P, Aeq, G;
  Vector q, beq, h;
};

inline RandomQp MakeRandomQp(std::mt19937_64& rng, int n, int neq, int ngen, bool lp) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.2, 1.5);
  RandomQp r;
  if (lp) {
    r.P = Matrix::Zero(n, n);
  } else {
    Matrix L(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) L(i, j) = nd(rng);
    }
    r.P = L * L.transpose() + 0.1 * Matrix::Identity(n, n);
  }
  r.q.resize(n);
  for (int i = 0; i < n; ++i) r.q(i) = 2.0 * nd(rng);
  // Equality rows through a random interior point.
  Vector z0(n);
  for (int i = 0; i < n; ++i) z0(i) = 0.3 * nd(rng);
  z0 = z0.cwiseMax(-0.5).cwiseMin(0.5);
  r.Aeq.resize(neq, n);
  for (int i = 0; i < neq; ++i) {
    for (int j = 0; j < n; ++j) r.Aeq(i, j) = nd(rng);
  }
  r.beq = r.Aeq * z0;
  // Box |z_i| <= b_i plus general rows with slack at z0.
  r.G.resize(2 * n + ngen, n);
  r.h.resize(2 * n + ngen);
  r.G.setZero();
  for (int i = 0; i < n; ++i) {
    const double b = std::abs(z0(i)) + ud(rng);
    r.G(2 * i, i) = 1.0;
    r.h(2 * i) = b;
    r.G(2 * i + 1, i) = -1.0;
    r.h(2 * i + 1) = b;
  }
  for (int k = 0; k < ngen; ++k) {
    Vector a(n);
    for (int j = 0; j < n; ++j) a(j) = nd(rng);
    r.G.row(2 * n + k) = a.transpose();
    r.h(2 * n + k) = a.dot(z0) + ud(rng);
  }
  return r;
}

}  // namespace oracle

#pragma once

// Dense-factorization primal-dual interior point method for convex QPs and
// LPs of the form
//
//   minimize    1/2 z'Pz + q'z
//   subject to  Aeq z  = beq
//               Gin z <= hin
//
// Infeasibility is never inferred from a failed run of the interior point
// iteration; it is decided by a separate phase-1 LP (CheckFeasible).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "nedmpc/types.hpp"

namespace nedmpc::qp {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct SolverSettings {
  double kkt_tol = 1e-7;
  double feas_tol = 1e-7;
  int max_iter = 5000;
};

struct QpProblem {
  SparseMatrix P;
  Vector q;
  SparseMatrix Aeq;
  Vector beq;
  SparseMatrix Gin;
  Vector hin;

  Index num_vars() const { return q.size(); }

  static QpProblem Dense(const Matrix& P, const Vector& q, const Matrix& Aeq,
                         const Vector& beq, const Matrix& Gin,
                         const Vector& hin) {
    QpProblem p;
    p.P = P.sparseView();
    p.q = q;
    p.Aeq = Aeq.sparseView();
    p.beq = beq;
    p.Gin = Gin.sparseView();
    p.hin = hin;
    return p;
  }
};

enum class SolveStatus { kOptimal, kInfeasible, kMaxIter };

inline const char* ToString(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal:
      return "Optimal";
    case SolveStatus::kInfeasible:
      return "Infeasible";
    case SolveStatus::kMaxIter:
      return "MaxIter";
  }
  return "?";
}

struct Solution {
  SolveStatus status = SolveStatus::kMaxIter;
  Vector z;
  Vector eq_duals;    // y, one per equality row
  Vector ineq_duals;  // mu >= 0, one per inequality row
  double objective = kInf;
  int iterations = 0;

  bool optimal() const { return status == SolveStatus::kOptimal; }
};

struct FeasibilityResult {
  bool feasible = false;
  double slack = kInf;
  Vector witness;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_ineq = 0.0;  // max(Gz - h)_+
  double complementarity = 0.0;
  double dual_sign = 0.0;  // max(-mu)_+

  double max() const {
    return std::max({stationarity, primal_eq, primal_ineq, complementarity,
                     dual_sign});
  }
};

inline KktResiduals ComputeKktResiduals(const QpProblem& p, const Vector& z,
                                        const Vector& y, const Vector& mu) {
  KktResiduals r;
  Vector grad = p.P * z + p.q;
  if (p.Aeq.rows() > 0) grad += p.Aeq.transpose() * y;
  if (p.Gin.rows() > 0) grad += p.Gin.transpose() * mu;
  r.stationarity = grad.size() > 0 ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  if (p.Aeq.rows() > 0) {
    r.primal_eq = (p.Aeq * z - p.beq).lpNorm<Eigen::Infinity>();
  }
  if (p.Gin.rows() > 0) {
    const Vector slack = p.Gin * z - p.hin;
    r.primal_ineq = std::max(0.0, slack.maxCoeff());
    r.complementarity = mu.cwiseProduct(slack).cwiseAbs().maxCoeff();
    r.dual_sign = std::max(0.0, -mu.minCoeff());
  }
  return r;
}

namespace internal {

inline void ValidateShapes(const QpProblem& p) {
  const Index n = p.num_vars();
  if (p.P.rows() != n || p.P.cols() != n) {
    throw DimensionError("QpProblem: P must be n x n");
  }
  if (p.Aeq.cols() != n && p.Aeq.rows() > 0) {
    throw DimensionError("QpProblem: Aeq column count differs from n");
  }
  if (p.Aeq.rows() != p.beq.size()) {
    throw DimensionError("QpProblem: Aeq/beq row mismatch");
  }
  if (p.Gin.cols() != n && p.Gin.rows() > 0) {
    throw DimensionError("QpProblem: Gin column count differs from n");
  }
  if (p.Gin.rows() != p.hin.size()) {
    throw DimensionError("QpProblem: Gin/hin row mismatch");
  }
  if (!p.q.allFinite() || !p.beq.allFinite() || !p.hin.allFinite()) {
    throw ParameterError("QpProblem: non-finite data");
  }
}

inline bool IsDiagonal(const SparseMatrix& P) {
  for (Index r = 0; r < P.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(P, r); it; ++it) {
      if (it.col() != r && it.value() != 0.0) return false;
    }
  }
  return true;
}

inline void ValidateConvexity(const QpProblem& p) {
  const Index n = p.num_vars();
  if (n == 0 || p.P.nonZeros() == 0) return;
  const SparseMatrix Pt = SparseMatrix(p.P.transpose());
  const double scale = std::max(1.0, Matrix(p.P).cwiseAbs().maxCoeff());
  if ((p.P - Pt).norm() > 1e-12 * scale * static_cast<double>(n)) {
    throw ParameterError("QpProblem: P is not symmetric");
  }
  double min_eig = 0.0;
  if (IsDiagonal(p.P)) {
    min_eig = Vector(p.P.diagonal()).minCoeff();
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(p.P),
                                             Eigen::EigenvaluesOnly);
    min_eig = es.eigenvalues().minCoeff();
  }
  if (min_eig < -1e-10) {
    throw ParameterError("QpProblem: P is not positive semidefinite (min "
                         "eigenvalue " + std::to_string(min_eig) + ")");
  }
}

// Indices of a maximal linearly independent subset of the rows of A.
inline std::vector<Index> IndependentRows(const SparseMatrix& A) {
  std::vector<Index> keep;
  if (A.rows() == 0) return keep;
  const Matrix At = Matrix(A).transpose();
  Eigen::ColPivHouseholderQR<Matrix> qr(At);
  const double max_abs = At.cwiseAbs().maxCoeff();
  if (max_abs == 0.0) return keep;
  qr.setThreshold(1e-11);
  const Index rank = qr.rank();
  for (Index k = 0; k < rank; ++k) keep.push_back(qr.colsPermutation().indices()(k));
  std::sort(keep.begin(), keep.end());
  return keep;
}

inline SparseMatrix SelectRows(const SparseMatrix& A,
                               const std::vector<Index>& rows) {
  SparseMatrix out(static_cast<Index>(rows.size()), A.cols());
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (SparseMatrix::InnerIterator it(A, rows[k]); it; ++it) {
      trips.emplace_back(static_cast<Index>(k), it.col(), it.value());
    }
  }
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

// Solves the reduced Newton system
//
//   [P + G'WG  A'] [dz]   [r1]
//   [A         0 ] [dy] = [r2]
//
// either through a dense LU of the full matrix, or (when P is diagonal and
// every variable carries a single-variable bound or a positive P entry)
// through the Schur complement onto the general inequality and equality rows.
class NewtonSystem {
 public:
  NewtonSystem(const SparseMatrix& P, const SparseMatrix& A,
               const SparseMatrix& G, bool allow_schur = true)
      : P_(P), A_(A), G_(G), n_(P.rows()), p_(A.rows()) {
    ClassifyRows();
    if (allow_schur) ChoosePath();
    if (!schur_) ChooseEliminated();
  }

  bool uses_schur() const { return schur_; }

  void Factor(const Vector& w) {
    w_ = w;
    if (schur_) {
      FactorSchur();
    } else {
      FactorDense();
    }
  }

  // Optionally also returns W G dz. On the Schur path the general rows of
  // that product come straight out of the reduced solve, which keeps them
  // accurate when W has entries far beyond 1 / eps.
  void Solve(const Vector& r1, const Vector& r2, Vector* dz, Vector* dy,
             Vector* wgdz = nullptr) const {
    if (schur_) {
      SolveSchur(r1, r2, dz, dy, wgdz);
    } else {
      SolveDense(r1, r2, dz, dy);
      if (wgdz != nullptr) *wgdz = w_.cwiseProduct(G_ * *dz);
    }
  }

 private:
  void ClassifyRows() {
    bound_var_.assign(G_.rows(), -1);
    has_bound_.assign(n_, false);
    for (Index r = 0; r < G_.rows(); ++r) {
      Index count = 0;
      Index col = -1;
      for (SparseMatrix::InnerIterator it(G_, r); it; ++it) {
        if (it.value() != 0.0) {
          ++count;
          col = it.col();
        }
      }
      if (count == 1) {
        bound_var_[r] = col;
        has_bound_[col] = true;
      } else {
        general_rows_.push_back(r);
      }
    }
  }

  void ChoosePath() {
    schur_ = false;
    if (!IsDiagonal(P_)) return;
    const Vector pd = P_.diagonal();
    for (Index j = 0; j < n_; ++j) {
      if (!(pd(j) > 0.0) && !has_bound_[j]) return;
    }
    const Index c = static_cast<Index>(general_rows_.size()) + p_;
    if (2 * c >= n_) return;
    schur_ = true;
    Gg_ = SelectRows(G_, general_rows_);
    C_.resize(c, n_);
    std::vector<Eigen::Triplet<double>> trips;
    for (Index r = 0; r < Gg_.rows(); ++r) {
      for (SparseMatrix::InnerIterator it(Gg_, r); it; ++it) {
        trips.emplace_back(r, it.col(), it.value());
      }
    }
    for (Index r = 0; r < p_; ++r) {
      for (SparseMatrix::InnerIterator it(A_, r); it; ++it) {
        trips.emplace_back(Gg_.rows() + r, it.col(), it.value());
      }
    }
    C_.setFromTriplets(trips.begin(), trips.end());
    pdiag_ = pd;
  }

  // Variables that appear in exactly one general inequality row, in no
  // equality row, and with no off-diagonal P entry (typically phase-1
  // slacks), at most one per row. Eliminating them only reweights their
  // row, which keeps the dense system at the size of the remaining
  // variables. Only worth it for large problems.
  void ChooseEliminated() {
    kept_.clear();
    elim_row_.assign(n_, -1);
    if (n_ <= 400) {
      for (Index j = 0; j < n_; ++j) kept_.push_back(j);
      return;
    }
    std::vector<int> in_general(n_, 0);
    std::vector<Index> row_of(n_, -1);
    for (Index r : general_rows_) {
      for (SparseMatrix::InnerIterator it(G_, r); it; ++it) {
        if (it.value() == 0.0) continue;
        ++in_general[it.col()];
        row_of[it.col()] = r;
      }
    }
    std::vector<bool> blocked(n_, false);
    for (Index r = 0; r < p_; ++r) {
      for (SparseMatrix::InnerIterator it(A_, r); it; ++it) blocked[it.col()] = true;
    }
    for (Index r = 0; r < P_.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(P_, r); it; ++it) {
        if (it.col() != r && it.value() != 0.0) blocked[r] = blocked[it.col()] = true;
      }
    }
    row_elim_.assign(G_.rows(), -1);
    for (Index j = 0; j < n_; ++j) {
      const Index r = row_of[j];
      if (!blocked[j] && in_general[j] == 1 && row_elim_[r] < 0) {
        row_elim_[r] = j;
        elim_row_[j] = r;
      } else {
        kept_.push_back(j);
      }
    }
    pos_.assign(n_, -1);
    for (std::size_t k = 0; k < kept_.size(); ++k) pos_[kept_[k]] = static_cast<Index>(k);
    std::vector<Eigen::Triplet<double>> tk, ta, tp;
    for (Index r = 0; r < G_.rows(); ++r) {
      for (SparseMatrix::InnerIterator it(G_, r); it; ++it) {
        if (pos_[it.col()] >= 0) tk.emplace_back(r, pos_[it.col()], it.value());
      }
    }
    const Index nk = static_cast<Index>(kept_.size());
    Gk_.resize(G_.rows(), nk);
    Gk_.setFromTriplets(tk.begin(), tk.end());
    for (Index r = 0; r < p_; ++r) {
      for (SparseMatrix::InnerIterator it(A_, r); it; ++it) {
        ta.emplace_back(r, pos_[it.col()], it.value());
      }
    }
    Ak_.resize(p_, nk);
    Ak_.setFromTriplets(ta.begin(), ta.end());
    for (Index r = 0; r < P_.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(P_, r); it; ++it) {
        if (pos_[r] >= 0 && pos_[it.col()] >= 0) tp.emplace_back(pos_[r], pos_[it.col()], it.value());
      }
    }
    Pk_.resize(nk, nk);
    Pk_.setFromTriplets(tp.begin(), tp.end());
  }

  bool eliminating() const { return static_cast<Index>(kept_.size()) < n_; }

  void FactorDense() {
    if (eliminating()) {
      FactorDenseEliminated();
      return;
    }
    const Index m = n_ + p_;
    K_ = Matrix::Zero(m, m);
    K_.topLeftCorner(n_, n_) = Matrix(P_);
    if (G_.rows() > 0) {
      const Eigen::SparseMatrix<double> Gc = G_;
      const Eigen::SparseMatrix<double> GtWG =
          Eigen::SparseMatrix<double>(Gc.transpose() * w_.asDiagonal()) * Gc;
      K_.topLeftCorner(n_, n_) += Matrix(GtWG);
    }
    if (p_ > 0) {
      const Matrix Ad = Matrix(A_);
      K_.block(n_, 0, p_, n_) = Ad;
      K_.block(0, n_, n_, p_) = Ad.transpose();
    }
    FactorK(n_);
  }

  void FactorDenseEliminated() {
    const Index nk = static_cast<Index>(kept_.size());
    const Vector pd = P_.diagonal();
    hee_ = Vector::Zero(n_);
    for (Index j = 0; j < n_; ++j) {
      if (elim_row_[j] >= 0) hee_(j) = pd(j);
    }
    for (Index r = 0; r < G_.rows(); ++r) {
      const Index j = bound_var_[r];
      if (j >= 0 && elim_row_[j] >= 0) {
        const double a = G_.coeff(r, j);
        hee_(j) += w_(r) * a * a;
      }
    }
    elim_coef_ = Vector::Zero(G_.rows());
    for (Index r = 0; r < G_.rows(); ++r) {
      const Index j = row_elim_[r];
      if (j < 0) continue;
      elim_coef_(r) = G_.coeff(r, j);
      hee_(j) += w_(r) * elim_coef_(r) * elim_coef_(r);
    }
    Vector wmod = w_;
    for (Index r = 0; r < G_.rows(); ++r) {
      const Index j = row_elim_[r];
      if (j < 0) continue;
      const double t = w_(r) * elim_coef_(r);
      wmod(r) -= t * t / hee_(j);
    }
    const Index m = nk + p_;
    K_ = Matrix::Zero(m, m);
    K_.topLeftCorner(nk, nk) = Matrix(Pk_);
    const Eigen::SparseMatrix<double> Gc = Gk_;
    K_.topLeftCorner(nk, nk) +=
        Matrix(Eigen::SparseMatrix<double>(
            Eigen::SparseMatrix<double>(Gc.transpose() * wmod.asDiagonal()) * Gc));
    if (p_ > 0) {
      const Matrix Ad = Matrix(Ak_);
      K_.block(nk, 0, p_, nk) = Ad;
      K_.block(0, nk, nk, p_) = Ad.transpose();
    }
    FactorK(nk);
  }

  void FactorK(Index nprimal) {
    const Index m = K_.rows();
    // A small fixed regularization; scaling it with the matrix would let the
    // barrier weights near convergence swamp the step.
    Matrix Kreg = K_;
    for (Index i = 0; i < nprimal; ++i) Kreg(i, i) += 1e-10;
    for (Index i = nprimal; i < m; ++i) Kreg(i, i) -= 1e-10;
    lu_.compute(Kreg);
  }

  void SolveDense(const Vector& r1, const Vector& r2, Vector* dz,
                  Vector* dy) const {
    if (eliminating()) {
      SolveDenseEliminated(r1, r2, dz, dy);
      return;
    }
    Vector rhs(n_ + p_);
    rhs << r1, r2;
    const Vector x = SolveK(rhs);
    *dz = x.head(n_);
    *dy = x.tail(p_);
  }

  void SolveDenseEliminated(const Vector& r1, const Vector& r2, Vector* dz,
                            Vector* dy) const {
    const Index nk = static_cast<Index>(kept_.size());
    // v_r = w_r a_re r1_e / H_ee on rows that own an eliminated variable.
    Vector v = Vector::Zero(G_.rows());
    for (Index r = 0; r < G_.rows(); ++r) {
      const Index j = row_elim_[r];
      if (j >= 0) v(r) = w_(r) * elim_coef_(r) * r1(j) / hee_(j);
    }
    Vector rk(nk);
    for (Index k = 0; k < nk; ++k) rk(k) = r1(kept_[k]);
    rk -= Gk_.transpose() * v;
    Vector rhs(nk + p_);
    rhs << rk, r2;
    const Vector x = SolveK(rhs);
    const Vector zk = x.head(nk);
    const Vector gz = Gk_ * zk;
    dz->resize(n_);
    for (Index k = 0; k < nk; ++k) (*dz)(kept_[k]) = zk(k);
    for (Index r = 0; r < G_.rows(); ++r) {
      const Index j = row_elim_[r];
      if (j >= 0) (*dz)(j) = (r1(j) - w_(r) * elim_coef_(r) * gz(r)) / hee_(j);
    }
    *dy = x.tail(p_);
  }

  Vector SolveK(const Vector& rhs) const {
    Vector x = lu_.solve(rhs);
    double last = (rhs - K_ * x).lpNorm<Eigen::Infinity>();
    for (int refine = 0; refine < 10 && last > 0.0; ++refine) {
      const Vector step = lu_.solve(rhs - K_ * x);
      const Vector trial = x + step;
      const double res = (rhs - K_ * trial).lpNorm<Eigen::Infinity>();
      if (!(res < 0.5 * last)) {
        if (res < last) x = trial;
        break;
      }
      x = trial;
      last = res;
    }
    return x;
  }

  void FactorSchur() {
    dinv_ = pdiag_;
    for (Index r = 0; r < G_.rows(); ++r) {
      const Index j = bound_var_[r];
      if (j < 0) continue;
      const double a = G_.coeff(r, j);
      dinv_(j) += w_(r) * a * a;
    }
    dinv_ = dinv_.cwiseInverse();
    const Eigen::SparseMatrix<double> Cc = C_;
    Matrix S = Matrix(Eigen::SparseMatrix<double>(
        Eigen::SparseMatrix<double>(Cc * dinv_.asDiagonal()) *
        Eigen::SparseMatrix<double>(Cc.transpose())));
    for (std::size_t k = 0; k < general_rows_.size(); ++k) {
      const Index r = static_cast<Index>(k);
      S(r, r) += 1.0 / w_(general_rows_[k]);
    }
    S_ = S;
    S.diagonal().array() += 1e-12;
    ldlt_.compute(S);
  }

  void SolveSchur(const Vector& r1, const Vector& r2, Vector* dz, Vector* dy,
                  Vector* wgdz) const {
    Vector rhs = C_ * dinv_.cwiseProduct(r1);
    rhs.tail(p_) -= r2;
    Vector u = ldlt_.solve(rhs);
    double last = (rhs - S_ * u).lpNorm<Eigen::Infinity>();
    for (int refine = 0; refine < 10 && last > 0.0; ++refine) {
      const Vector trial = u + ldlt_.solve(rhs - S_ * u);
      const double res = (rhs - S_ * trial).lpNorm<Eigen::Infinity>();
      if (!(res < 0.5 * last)) {
        if (res < last) u = trial;
        break;
      }
      u = trial;
      last = res;
    }
    *dz = dinv_.cwiseProduct(r1 - C_.transpose() * u);
    *dy = u.tail(p_);
    if (wgdz != nullptr) {
      *wgdz = w_.cwiseProduct(G_ * *dz);
      for (std::size_t k = 0; k < general_rows_.size(); ++k) {
        (*wgdz)(general_rows_[k]) = u(static_cast<Index>(k));
      }
    }
  }

  const SparseMatrix& P_;
  const SparseMatrix& A_;
  const SparseMatrix& G_;
  Index n_;
  Index p_;
  bool schur_ = false;
  std::vector<Index> bound_var_;
  std::vector<bool> has_bound_;
  std::vector<Index> general_rows_;
  SparseMatrix Gg_;
  SparseMatrix C_;
  Vector pdiag_;
  std::vector<Index> kept_;      // dense-path variables
  std::vector<Index> pos_;       // variable -> position in kept_, or -1
  std::vector<Index> elim_row_;  // eliminated variable -> its general row
  std::vector<Index> row_elim_;  // general row -> its eliminated variable
  SparseMatrix Gk_;
  SparseMatrix Ak_;
  SparseMatrix Pk_;
  Vector hee_;
  Vector elim_coef_;
  Vector w_;
  Vector dinv_;
  Matrix K_;
  Matrix S_;
  Eigen::PartialPivLU<Matrix> lu_;
  Eigen::LDLT<Matrix> ldlt_;
};

inline constexpr Index kDenseRetryLimit = 2000;

inline double MaxStep(const Vector& v, const Vector& dv) {
  double alpha = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  }
  return alpha;
}

// Interior point iteration on a problem with linearly independent equality
// rows. Returns kOptimal only if the KKT conditions hold to settings.kkt_tol;
// otherwise kMaxIter with the last iterate.
inline Solution InteriorPoint(const QpProblem& p, const SolverSettings& s,
                              bool allow_schur = true) {
  const Index n = p.num_vars();
  const Index neq = p.Aeq.rows();
  const Index m = p.Gin.rows();
  NewtonSystem newton(p.P, p.Aeq, p.Gin, allow_schur);
  const SparseMatrix Gt = p.Gin.transpose();
  const SparseMatrix At = p.Aeq.transpose();

  Solution sol;
  Vector z = Vector::Zero(n);
  Vector y = Vector::Zero(neq);
  Vector slack = Vector::Ones(m);
  Vector lam = Vector::Ones(m);

  // Initial point: least-squares fits of the inequalities for the primal
  // and of stationarity for the multipliers, each without the other's data,
  // then shifted into the positive orthant. Seeding the multipliers from the
  // cost keeps the start balanced when the cost is badly scaled.
  {
    newton.Factor(Vector::Ones(m));
    Vector r1 = Vector::Zero(n);
    if (m > 0) r1 += Gt * p.hin;
    Vector y_fit;
    newton.Solve(r1, p.beq, &z, &y_fit);
    Vector v;
    newton.Solve(-p.q, Vector::Zero(neq), &v, &y);
    if (m > 0) {
      slack = p.hin - p.Gin * z;
      lam = p.Gin * v;
      slack.array() += std::max(-1.5 * slack.minCoeff(), 0.0);
      lam.array() += std::max(-1.5 * lam.minCoeff(), 0.0);
      slack = slack.cwiseMax(1e-8);
      lam = lam.cwiseMax(1.0);
      const double gap = slack.dot(lam);
      slack.array() += 0.5 * gap / lam.sum();
      lam.array() += 0.5 * gap / slack.sum();
    }
  }

  // Once the tolerance is met, a few more steps are cheap and shrink the
  // active slacks, which the primal error is proportional to. The best
  // converged iterate is kept.
  constexpr int kPolishSteps = 3;
  double best_kkt = kInf;
  int polish_left = -1;
  const auto keep = [&](double kkt) {
    best_kkt = kkt;
    sol.status = SolveStatus::kOptimal;
    sol.z = z;
    sol.eq_duals = y;
    sol.ineq_duals = lam;
  };

  double best_merit = kInf;
  int since_improved = 0;
  int iter = 0;
  for (; iter < s.max_iter; ++iter) {
    Vector rd = p.P * z + p.q;
    if (neq > 0) rd += At * y;
    if (m > 0) rd += Gt * lam;
    const Vector rp = neq > 0 ? Vector(p.Aeq * z - p.beq) : Vector();
    const Vector rg = m > 0 ? Vector(p.Gin * z + slack - p.hin) : Vector();
    const double mu = m > 0 ? slack.dot(lam) / static_cast<double>(m) : 0.0;

    const double kkt = ComputeKktResiduals(p, z, y, lam).max();
    if (kkt <= s.kkt_tol) {
      if (kkt < best_kkt) keep(kkt);
      if (polish_left < 0) polish_left = kPolishSteps;
      if (polish_left-- == 0 || kkt <= 1e-3 * s.kkt_tol) break;
    }
    const double merit =
        std::max({rd.size() ? rd.lpNorm<Eigen::Infinity>() : 0.0,
                  rp.size() ? rp.lpNorm<Eigen::Infinity>() : 0.0,
                  rg.size() ? rg.lpNorm<Eigen::Infinity>() : 0.0, mu});
    if (!std::isfinite(merit) || z.lpNorm<Eigen::Infinity>() > 1e14 ||
        (m > 0 && lam.lpNorm<Eigen::Infinity>() > 1e14)) {
      break;
    }
    if (merit < 0.5 * best_merit) {
      best_merit = merit;
      since_improved = 0;
    } else if (++since_improved > 40) {
      break;
    }

    const Vector w = m > 0 ? Vector(lam.cwiseQuotient(slack)) : Vector();
    newton.Factor(w);

    const auto direction = [&](const Vector& rc, Vector* dz, Vector* dy,
                               Vector* dl, Vector* dsl) {
      Vector r1 = -rd;
      if (m > 0) r1 -= Gt * (w.cwiseProduct(rg) - rc.cwiseQuotient(slack));
      const Vector r2 = neq > 0 ? Vector(-rp) : Vector();
      Vector wgdz;
      newton.Solve(r1, r2, dz, dy, &wgdz);
      if (m > 0) {
        *dl = wgdz + w.cwiseProduct(rg) - rc.cwiseQuotient(slack);
        // From the linear rows, not from complementarity: dividing by
        // vanishing multipliers would amplify rounding.
        *dsl = -rg - p.Gin * *dz;
      }
    };

    Vector dz, dy, dl, dsl;
    if (m == 0) {
      direction(Vector(), &dz, &dy, &dl, &dsl);
      z += dz;
      y += dy;
      continue;
    }
    // Predictor.
    Vector rc = slack.cwiseProduct(lam);
    direction(rc, &dz, &dy, &dl, &dsl);
    const double a_aff = std::min(MaxStep(slack, dsl), MaxStep(lam, dl));
    const double mu_aff =
        (slack + a_aff * dsl).dot(lam + a_aff * dl) / static_cast<double>(m);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
    // Corrector.
    rc += dsl.cwiseProduct(dl);
    rc.array() -= sigma * mu;
    direction(rc, &dz, &dy, &dl, &dsl);
    const double a_max = std::min(MaxStep(slack, dsl), MaxStep(lam, dl));
    const double alpha = std::min(1.0, 0.99 * a_max);
    z += alpha * dz;
    y += alpha * dy;
    slack += alpha * dsl;
    lam += alpha * dl;
    slack = slack.cwiseMax(1e-300);
    lam = lam.cwiseMax(1e-300);
  }
  // The Schur complement is formed from normal equations, whose accuracy
  // degrades on degenerate problems near the optimum. Moderate sizes get a
  // second attempt on the full system.
  if (sol.status != SolveStatus::kOptimal && newton.uses_schur() &&
      n + neq <= kDenseRetryLimit) {
    return InteriorPoint(p, s, false);
  }
  sol.iterations = iter;
  if (sol.status != SolveStatus::kOptimal) {
    sol.z = z;
    sol.eq_duals = y;
    sol.ineq_duals = lam;
  }
  const Vector& z_out = sol.z;
  sol.objective = 0.5 * z_out.dot(p.P * z_out) + p.q.dot(z_out);
  return sol;
}

}  // namespace internal

/// Phase-1 feasibility oracle: minimizes the total violation of the
/// constraint rows using nonnegative slacks. Single-variable bound rows that
/// are mutually consistent are kept hard (their optimal slack would be zero
/// anyway); all other rows receive slacks.
inline FeasibilityResult CheckFeasible(const SparseMatrix& Aeq,
                                       const Vector& beq,
                                       const SparseMatrix& Gin,
                                       const Vector& hin,
                                       const SolverSettings& settings = {}) {
  const Index n = std::max(Aeq.cols(), Gin.cols());
  const Index p = Aeq.rows();
  const Index m = Gin.rows();

  // Bound rows per variable, and whether they are consistent.
  std::vector<double> lo(n, -kInf), hi(n, kInf);
  std::vector<Index> single_col(m, -1);
  for (Index r = 0; r < m; ++r) {
    Index count = 0, col = -1;
    double a = 0.0;
    for (SparseMatrix::InnerIterator it(Gin, r); it; ++it) {
      if (it.value() != 0.0) {
        ++count;
        col = it.col();
        a = it.value();
      }
    }
    if (count != 1) continue;
    single_col[r] = col;
    const double bound = hin(r) / a;
    if (a > 0) {
      hi[col] = std::min(hi[col], bound);
    } else {
      lo[col] = std::max(lo[col], bound);
    }
  }
  std::vector<bool> relaxed(m, true);
  for (Index r = 0; r < m; ++r) {
    const Index c = single_col[r];
    if (c >= 0 && lo[c] <= hi[c]) relaxed[r] = false;
  }
  Index nrelax = 0;
  for (Index r = 0; r < m; ++r) nrelax += relaxed[r] ? 1 : 0;
  // A row with all-zero coefficients is either trivially satisfied or
  // needs its slack; it stays in the relaxed set.

  const Index nv = n + 2 * p + nrelax;
  qp::QpProblem lp;
  lp.P.resize(nv, nv);
  lp.q = Vector::Zero(nv);
  lp.q.segment(n, 2 * p + nrelax).setOnes();
  std::vector<Eigen::Triplet<double>> ta, tg;
  for (Index r = 0; r < p; ++r) {
    for (SparseMatrix::InnerIterator it(Aeq, r); it; ++it) {
      ta.emplace_back(r, it.col(), it.value());
    }
    ta.emplace_back(r, n + r, 1.0);
    ta.emplace_back(r, n + p + r, -1.0);
  }
  lp.Aeq.resize(p, nv);
  lp.Aeq.setFromTriplets(ta.begin(), ta.end());
  lp.beq = beq;
  const Index mg = m + 2 * p + nrelax;
  lp.hin = Vector::Zero(mg);
  Index k = 0;
  for (Index r = 0; r < m; ++r) {
    for (SparseMatrix::InnerIterator it(Gin, r); it; ++it) {
      tg.emplace_back(r, it.col(), it.value());
    }
    if (relaxed[r]) tg.emplace_back(r, n + 2 * p + (k++), -1.0);
    lp.hin(r) = hin(r);
  }
  for (Index j = 0; j < 2 * p + nrelax; ++j) {
    tg.emplace_back(m + j, n + j, -1.0);
  }
  lp.Gin.resize(mg, nv);
  lp.Gin.setFromTriplets(tg.begin(), tg.end());

  SolverSettings s = settings;
  s.kkt_tol = std::min(settings.kkt_tol, 1e-9);
  const std::vector<Index> keep = internal::IndependentRows(lp.Aeq);
  qp::QpProblem reduced = lp;
  reduced.Aeq = internal::SelectRows(lp.Aeq, keep);
  reduced.beq.resize(static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) reduced.beq(i) = lp.beq(keep[i]);
  Solution sol = internal::InteriorPoint(reduced, s);
  if (!sol.optimal()) {
    // Retry at the requested tolerance before giving up.
    s.kkt_tol = settings.kkt_tol;
    sol = internal::InteriorPoint(reduced, s);
    if (!sol.optimal()) {
      throw SolverError("phase-1 feasibility LP did not converge");
    }
  }
  FeasibilityResult res;
  res.witness = sol.z.head(n);
  res.slack = std::max(0.0, sol.z.tail(2 * p + nrelax).sum());
  // Measure the violation directly at the witness as well, so the verdict
  // does not hinge on the slack variables alone.
  double direct = 0.0;
  if (p > 0) direct += (Aeq * res.witness - beq).cwiseAbs().sum();
  if (m > 0) direct += (Gin * res.witness - hin).cwiseMax(0.0).sum();
  res.slack = std::min(res.slack, direct);
  res.feasible = res.slack <= settings.feas_tol;
  return res;
}

inline FeasibilityResult CheckFeasible(const Matrix& Aeq, const Vector& beq,
                                       const Matrix& Gin, const Vector& hin,
                                       const SolverSettings& settings = {}) {
  return CheckFeasible(SparseMatrix(Aeq.sparseView()), beq,
                       SparseMatrix(Gin.sparseView()), hin, settings);
}

inline Solution SolveQp(const QpProblem& problem,
                        const SolverSettings& settings = {}) {
  internal::ValidateShapes(problem);
  internal::ValidateConvexity(problem);
  const std::vector<Index> keep = internal::IndependentRows(problem.Aeq);
  QpProblem reduced = problem;
  reduced.Aeq = internal::SelectRows(problem.Aeq, keep);
  reduced.beq.resize(static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    reduced.beq(i) = problem.beq(keep[i]);
  }
  if (reduced.Aeq.rows() == 0) reduced.Aeq.resize(0, problem.num_vars());
  if (problem.Gin.rows() == 0) reduced.Gin.resize(0, problem.num_vars());

  Solution sol = internal::InteriorPoint(reduced, settings);
  Vector y_full = Vector::Zero(problem.Aeq.rows());
  for (std::size_t i = 0; i < keep.size(); ++i) y_full(keep[i]) = sol.eq_duals(i);
  sol.eq_duals = y_full;
  if (sol.optimal()) {
    // Dropped (dependent) equality rows must also hold.
    const KktResiduals r =
        ComputeKktResiduals(problem, sol.z, sol.eq_duals, sol.ineq_duals);
    if (r.max() <= settings.kkt_tol) return sol;
    sol.status = SolveStatus::kMaxIter;
  }
  const FeasibilityResult f = CheckFeasible(problem.Aeq, problem.beq,
                                            problem.Gin, problem.hin, settings);
  sol.status = f.feasible ? SolveStatus::kMaxIter : SolveStatus::kInfeasible;
  return sol;
}

inline Solution SolveLp(const Vector& c, const SparseMatrix& Aeq,
                        const Vector& beq, const SparseMatrix& Gin,
                        const Vector& hin, const SolverSettings& settings = {}) {
  QpProblem p;
  p.P.resize(c.size(), c.size());
  p.q = c;
  p.Aeq = Aeq;
  p.beq = beq;
  p.Gin = Gin;
  p.hin = hin;
  if (p.Aeq.rows() == 0) p.Aeq.resize(0, c.size());
  if (p.Gin.rows() == 0) p.Gin.resize(0, c.size());
  return SolveQp(p, settings);
}

inline Solution SolveLp(const Vector& c, const Matrix& Aeq, const Vector& beq,
                        const Matrix& Gin, const Vector& hin,
                        const SolverSettings& settings = {}) {
  return SolveLp(c, SparseMatrix(Aeq.sparseView()), beq,
                 SparseMatrix(Gin.sparseView()), hin, settings);
}

}  // namespace nedmpc::qp

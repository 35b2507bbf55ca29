#pragma once

// Compact convex sets held as generator (vertex-type) lists. Minkowski sums
// keep every pairwise sum and the sets themselves are never hull-reduced, so
// supports stay exact at the price of redundant points. LP-based routines
// decompose over the extreme points only.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nedmpc/qp.hpp"
#include "nedmpc/types.hpp"

namespace nedmpc {

/// Axis-aligned box {x : lo <= x <= hi}.
class Box {
 public:
  Box() = default;

  /// Requires finite bounds with lo < 0 < hi (the origin is interior).
  Box(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    RequireSameDim(lo_.size(), hi_.size(), "Box");
    if (!lo_.allFinite() || !hi_.allFinite()) {
      throw ParameterError("Box: bounds must be finite");
    }
    if ((lo_.array() >= 0.0).any() || (hi_.array() <= 0.0).any()) {
      throw ParameterError("Box: bounds must satisfy lo < 0 < hi");
    }
  }

  static Box Symmetric(const Vector& radius) { return Box(-radius, radius); }

  Index dim() const { return lo_.size(); }
  const Vector& lo() const { return lo_; }
  const Vector& hi() const { return hi_; }

  bool Contains(const Vector& x, double tol = 0.0) const {
    RequireSameDim(x.size(), dim(), "Box::Contains");
    return ((x - hi_).array() <= tol).all() && ((lo_ - x).array() <= tol).all();
  }

  /// Smallest a >= 0 with x in a*Box.
  double Gauge(const Vector& x) const {
    RequireSameDim(x.size(), dim(), "Box::Gauge");
    double g = 0.0;
    for (Index i = 0; i < dim(); ++i) {
      g = std::max({g, x(i) / hi_(i), x(i) / lo_(i)});
    }
    return g;
  }

  /// The 2^dim corners.
  std::vector<Vector> Vertices() const {
    const Index n = dim();
    std::vector<Vector> out;
    out.reserve(std::size_t{1} << n);
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
      Vector v(n);
      for (Index i = 0; i < n; ++i) {
        v(i) = (mask >> i) & 1U ? hi_(i) : lo_(i);
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  /// Facet k is {x : normal(k)' x <= offset(k)}; rows 0..n-1 are the upper
  /// faces, rows n..2n-1 the lower ones.
  Index num_facets() const { return 2 * dim(); }
  Vector normal(Index k) const {
    Vector c = Vector::Zero(dim());
    c(k % dim()) = k < dim() ? 1.0 : -1.0;
    return c;
  }
  double offset(Index k) const {
    return k < dim() ? hi_(k) : -lo_(k - dim());
  }

 private:
  Vector lo_;
  Vector hi_;
};

/// Compact convex set conv{g_1, ..., g_k}.
class ConvexSet {
 public:
  ConvexSet() = default;

  ConvexSet(Index dim, std::vector<Vector> generators)
      : dim_(dim), generators_(std::move(generators)) {
    if (generators_.empty()) {
      throw ParameterError("ConvexSet: generator list must be nonempty");
    }
    for (const Vector& g : generators_) RequireSameDim(g.size(), dim_, "ConvexSet");
  }

  static ConvexSet Origin(Index dim) {
    return ConvexSet(dim, {Vector::Zero(dim)});
  }

  static ConvexSet FromBox(const Box& box) {
    return ConvexSet(box.dim(), box.Vertices());
  }

  Index dim() const { return dim_; }
  Index size() const { return static_cast<Index>(generators_.size()); }
  const std::vector<Vector>& generators() const { return generators_; }

  /// Generators as the columns of a dim x size matrix.
  Matrix GeneratorMatrix() const {
    Matrix G(dim_, size());
    for (Index k = 0; k < size(); ++k) G.col(k) = generators_[k];
    return G;
  }

  bool IsOrigin(double tol = 0.0) const {
    return std::all_of(generators_.begin(), generators_.end(),
                       [tol](const Vector& g) {
                         return g.size() == 0 ||
                                g.lpNorm<Eigen::Infinity>() <= tol;
                       });
  }

 private:
  Index dim_ = 0;
  std::vector<Vector> generators_;
};

namespace internal {
inline void RequireScale(double a) {
  if (!(a >= 0.0 && a <= 1.0)) {
    throw ParameterError("scale factor must lie in [0, 1], got " +
                         std::to_string(a));
  }
}
}  // namespace internal

inline ConvexSet Scale(const ConvexSet& s, double a) {
  internal::RequireScale(a);
  std::vector<Vector> g;
  g.reserve(s.generators().size());
  for (const Vector& v : s.generators()) g.push_back(a * v);
  return ConvexSet(s.dim(), std::move(g));
}

/// a * Box. The result keeps lo < 0 < hi only for a > 0, so a = 0 is
/// rejected here; use the ConvexSet overload for the degenerate case.
inline Box Scale(const Box& b, double a) {
  internal::RequireScale(a);
  if (a == 0.0) throw ParameterError("Scale(Box, 0) is not a PC-set");
  return Box(a * b.lo(), a * b.hi());
}

inline ConvexSet LinearImage(const Matrix& T, const ConvexSet& s) {
  RequireSameDim(T.cols(), s.dim(), "LinearImage");
  std::vector<Vector> g;
  g.reserve(s.generators().size());
  for (const Vector& v : s.generators()) g.push_back(T * v);
  return ConvexSet(T.rows(), std::move(g));
}

inline ConvexSet MinkowskiSum(const ConvexSet& a, const ConvexSet& b) {
  RequireSameDim(a.dim(), b.dim(), "MinkowskiSum");
  std::vector<Vector> g;
  g.reserve(a.generators().size() * b.generators().size());
  for (const Vector& x : a.generators()) {
    for (const Vector& y : b.generators()) g.push_back(x + y);
  }
  return ConvexSet(a.dim(), std::move(g));
}

/// h_S(d) = max over generators of <d, g>.
inline double Support(const ConvexSet& s, const Vector& d) {
  RequireSameDim(d.size(), s.dim(), "Support");
  double best = -kInf;
  for (const Vector& g : s.generators()) best = std::max(best, d.dot(g));
  return best;
}

inline double Support(const Box& b, const Vector& d) {
  RequireSameDim(d.size(), b.dim(), "Support");
  double v = 0.0;
  for (Index i = 0; i < b.dim(); ++i) {
    v += d(i) >= 0.0 ? d(i) * b.hi()(i) : d(i) * b.lo()(i);
  }
  return v;
}

/// Smallest a >= 0 such that S is contained in a*X (facet-wise supports).
inline double ContainmentRatio(const ConvexSet& s, const Box& x) {
  RequireSameDim(s.dim(), x.dim(), "ContainmentRatio");
  double ratio = 0.0;
  for (Index k = 0; k < x.num_facets(); ++k) {
    ratio = std::max(ratio, Support(s, x.normal(k)) / x.offset(k));
  }
  return ratio;
}

/// Generators that are extreme points of conv(generators U {0}); the
/// origin itself is not listed. Every dropped generator lies in the hull of
/// the kept ones, up to rounding-level tolerance. Exact hulls in one and two
/// dimensions; above that a direction sweep followed by LP membership tests,
/// which cannot certify below about 1e-9 relative, so that is their floor.
/// Decomposition LPs over the full list are badly conditioned when many
/// generators nearly coincide, as happens for images of high-dimensional boxes.
inline ConvexSet ExtremeGenerators(const ConvexSet& s, double tol = 1e-12,
                                   const qp::SolverSettings& settings = {});

/// Membership p in conv(generators U {0}), decided by an LP over convex
/// weights.
inline bool ContainsPoint(const ConvexSet& s, const Vector& p, double tol = 1e-7,
                          const qp::SolverSettings& settings = {}) {
  RequireSameDim(p.size(), s.dim(), "ContainsPoint");
  const ConvexSet e = s.dim() <= 2 ? ExtremeGenerators(s) : s;
  const Index k = e.size();
  const Matrix G = e.GeneratorMatrix();
  Matrix Gin = Matrix::Zero(k + 1, k);
  Gin.topRows(k) = -Matrix::Identity(k, k);
  Gin.row(k).setOnes();
  Vector hin = Vector::Zero(k + 1);
  hin(k) = 1.0;
  qp::SolverSettings st = settings;
  st.feas_tol = tol;
  return qp::CheckFeasible(G, p, Gin, hin, st).feasible;
}

inline ConvexSet ExtremeGenerators(const ConvexSet& s, double tol,
                                   const qp::SolverSettings& settings) {
  const Index n = s.dim();
  const auto& gens = s.generators();
  double scale = 0.0;
  for (const Vector& g : gens) scale = std::max(scale, g.lpNorm<Eigen::Infinity>());
  if (n == 0 || scale == 0.0) return ConvexSet::Origin(n);
  const double eps = tol * scale;

  std::vector<Vector> kept;
  if (n == 1) {
    const auto [lo, hi] = std::minmax_element(
        gens.begin(), gens.end(), [](const Vector& a, const Vector& b) { return a(0) < b(0); });
    if ((*hi)(0) > eps) kept.push_back(*hi);
    if ((*lo)(0) < -eps) kept.push_back(*lo);
  } else if (n == 2) {
    // Andrew's monotone chain over the generators and the origin.
    std::vector<Vector> pts(gens.begin(), gens.end());
    pts.push_back(Vector::Zero(2));
    std::sort(pts.begin(), pts.end(), [](const Vector& a, const Vector& b) {
      return a(0) < b(0) || (a(0) == b(0) && a(1) < b(1));
    });
    const auto cross = [](const Vector& o, const Vector& a, const Vector& b) {
      return (a(0) - o(0)) * (b(1) - o(1)) - (a(1) - o(1)) * (b(0) - o(0));
    };
    std::vector<Vector> hull;
    const auto sweep = [&](auto first, auto last) {
      const std::size_t base = hull.size();
      for (auto it = first; it != last; ++it) {
        // Drop the middle point when it is within eps of the chord.
        while (hull.size() >= base + 2) {
          const Vector& a = hull[hull.size() - 2];
          const Vector& b = hull.back();
          const double len = std::max((*it - a).norm(), eps);
          if (cross(a, b, *it) / len > eps) break;
          hull.pop_back();
        }
        hull.push_back(*it);
      }
      hull.pop_back();
    };
    sweep(pts.begin(), pts.end());
    sweep(pts.rbegin(), pts.rend());
    for (const Vector& v : hull) {
      if (v.lpNorm<Eigen::Infinity>() > eps) kept.push_back(v);
    }
  } else {
    // Maximizers of a spread of directions are extreme; everything else is
    // tested against the hull of what has been kept so far.
    std::vector<bool> in(gens.size(), false);
    const auto take_argmax = [&](const Vector& d) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < gens.size(); ++j) {
        if (d.dot(gens[j]) > d.dot(gens[best])) best = j;
      }
      if (d.dot(gens[best]) > eps) in[best] = true;
    };
    for (Index i = 0; i < n; ++i) {
      take_argmax(Vector::Unit(n, i));
      take_argmax(-Vector::Unit(n, i));
    }
    std::mt19937_64 rng(0x5eed);
    std::normal_distribution<double> normal;
    for (int t = 0; t < 32 * static_cast<int>(n); ++t) {
      Vector d(n);
      for (Index i = 0; i < n; ++i) d(i) = normal(rng);
      take_argmax(d);
    }
    for (std::size_t j = 0; j < gens.size(); ++j) {
      if (in[j]) kept.push_back(gens[j]);
    }
    for (std::size_t j = 0; j < gens.size(); ++j) {
      if (in[j] || gens[j].lpNorm<Eigen::Infinity>() <= eps) continue;
      if (kept.empty() ||
          !ContainsPoint(ConvexSet(n, kept), gens[j], std::max(eps, 1e-9 * scale), settings)) {
        kept.push_back(gens[j]);
      }
    }
  }
  if (kept.empty()) return ConvexSet::Origin(n);
  return ConvexSet(n, std::move(kept));
}

}  // namespace nedmpc

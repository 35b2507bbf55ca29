#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace nedmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Invalid argument (out-of-range scalar, non-PSD weight, bad horizon).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand sizes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The numeric engine could not produce a trustworthy answer.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An optimization problem that must be feasible was not.
class InfeasibleError : public std::runtime_error {
 public:
  enum class Kind { kMain, kAncillary, kRciDesign, kNestedDesign };

  InfeasibleError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline void RequireSameDim(Index a, Index b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace nedmpc

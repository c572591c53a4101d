// core.hpp
//
// Shared domain types for the memquant library: quantile levels, observations,
// batches with an intercept column, coefficients and bandwidths, plus the
// biweight-integral smoothing function and the check loss.

#ifndef MEMQUANT_CORE_HPP
#define MEMQUANT_CORE_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace memquant {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ErrorKind {
  InvalidArgument,
  RankDeficient,
  NoConvergence,
  SingularSystem,
  DimensionMismatch,
  InvalidDimensions,
  QuantileOutOfRange,
  TooLarge,
  NotConverged,
  NotSymmetric,
  CountMismatch,
  InvalidArity,
  Overflow,
  Parse,
};

const char* to_string(ErrorKind kind);

// Every library failure is reported through this exception. The kind is what
// callers branch on; the CLI maps it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

class QuantileLevel {
 public:
  explicit QuantileLevel(double tau);

  double value() const noexcept { return tau_; }

 private:
  double tau_;
};

class Bandwidth {
 public:
  explicit Bandwidth(double h);

  double value() const noexcept { return h_; }

 private:
  double h_;
};

/// One response with its covariates. `x` excludes the intercept.
struct Observation {
  double y = 0.0;
  Vector x;
};

/// Index 0 is the intercept.
using Coefficients = Vector;

/// A block of observations stored column-wise. The design matrix carries the
/// constant intercept column at index 0, so `design.cols() == p + 1`.
struct Batch {
  Vector y;
  Matrix design;

  Batch() = default;
  Batch(Vector y, Matrix design);

  static Batch from_covariates(const Vector& y, const Matrix& covariates);
  static Batch from_observations(std::span<const Observation> observations);

  std::size_t size() const noexcept { return static_cast<std::size_t>(y.size()); }
  int dim() const noexcept { return static_cast<int>(design.cols()); }
  int covariates() const noexcept { return dim() - 1; }
  bool empty() const noexcept { return y.size() == 0; }

  /// Rows [first, first + count) as a new batch.
  Batch slice(std::size_t first, std::size_t count) const;
};

/// Intercept-augmented covariate vector (1, x1, ..., xp).
Vector with_intercept(const Vector& x);

/// Sequential blocks of `m` rows; the final block holds the remainder.
std::vector<Batch> split_sequential(const Batch& data, std::size_t m);

/// `parts` contiguous blocks whose sizes differ by at most one.
std::vector<Batch> split_even(const Batch& data, std::size_t parts);

Batch concatenate(std::span<const Batch> batches);

std::size_t total_count(std::span<const Batch> batches);

/// Integral of the biweight kernel, clamped to 0 below -1 and 1 above 1.
double smooth_h(double u) noexcept;

/// Biweight kernel (15/16)(1 - u^2)^2 on (-1, 1), zero elsewhere.
double smooth_h_prime(double u) noexcept;

/// Check loss x * (tau - 1{x <= 0}).
double check_loss(double x, QuantileLevel tau) noexcept;

/// Sum of check losses of the residuals y - X beta.
double qr_objective(const Batch& batch, const Coefficients& beta, QuantileLevel tau);

/// v0 = (p')^{-1/2} * ones, the reporting direction used throughout.
Vector unit_diagonal_direction(int dim);

void require_finite(const Vector& v, const char* what);

}  // namespace memquant

#endif  // MEMQUANT_CORE_HPP

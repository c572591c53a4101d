// leqr.hpp
//
// Local statistics (U, V) of the linear estimator for quantile regression,
// their additive merge, the closed-form step beta = V^{-1} U, the bandwidth
// schedule and round count, and the multi-round divide-and-conquer driver.

#ifndef MEMQUANT_LEQR_HPP
#define MEMQUANT_LEQR_HPP

#include "memquant/batch_qr.hpp"
#include "memquant/core.hpp"
#include "memquant/linsolve.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace memquant {

/// Sufficient statistics of one batch at a fixed (beta0, h):
///   u = sum_i x_i { H(r_i/h) + tau - 1 + (y_i/h) H'(r_i/h) }
///   v = sum_i x_i x_i' H'(r_i/h) / h
/// with r_i = y_i - x_i' beta0. Sums over disjoint batches add.
struct LocalStats {
  Vector u;
  Matrix v;
  std::int64_t count = 0;

  static LocalStats zero(int dim);

  int dim() const noexcept { return static_cast<int>(u.size()); }
  LocalStats& operator+=(const LocalStats& other);
};

LocalStats compute_local_stats(const Batch& batch, const Coefficients& beta0, Bandwidth h, QuantileLevel tau);

/// Same statistics from precomputed residuals y - X beta0, so several
/// bandwidths can share one residual pass.
LocalStats compute_local_stats_from_residuals(const Batch& batch, const Vector& residuals, Bandwidth h,
                                              QuantileLevel tau);

/// Contribution of a single observation; `x` already includes the intercept.
/// Adds into `acc` without allocating.
void accumulate_observation(LocalStats& acc, double y, const Vector& x, const Coefficients& beta0, Bandwidth h,
                            QuantileLevel tau);

/// Throws DimensionMismatch when the dimensions differ.
LocalStats merge(const LocalStats& a, const LocalStats& b);

struct StepResult {
  Coefficients beta;
  int cg_iterations = 0;
  double residual = 0.0;
};

/// beta = v^{-1} u by conjugate gradient, warm-started at `x0` when given.
/// Throws SingularSystem when CG cannot reach ||v beta - u|| <= 1e-9 (1 + ||u||).
StepResult solve_step(const LocalStats& agg, const std::optional<Vector>& x0 = std::nullopt);

/// c * max(sqrt(p/n), (p/m)^(2^(g-2))). Requires 1 <= p < m <= n and c > 0.
Bandwidth bandwidth_schedule(int g, std::int64_t p, std::int64_t m, std::int64_t n, double c = 1.0);

/// Smallest q >= 2 + log(log sqrt(p/n) / log(p/m)) / log 2, clamped to >= 1.
int required_rounds(std::int64_t p, std::int64_t m, std::int64_t n);

/// The p entering the bandwidth formulas. Intercept-only models (p = 0) use 1
/// so that the formulas stay positive.
std::int64_t bandwidth_dimension(int covariates);

struct DcConfig {
  QuantileLevel tau{0.5};
  /// Number of rounds, >= 1.
  int q = 1;
  /// Scaling constant per round; a single entry applies to every round.
  std::vector<double> c{1.0};
  /// When set, replaces the schedule; must hold q positive values.
  std::optional<std::vector<double>> bandwidths;
  /// When set, each round picks its constant from this grid by minimising
  /// the indicator score norm.
  std::optional<std::vector<double>> adaptive_grid;
  /// Partition used for the initial quantile regression fit.
  std::size_t initial_partition = 0;
  /// Batch size entering the schedule; 0 means the size of the initial partition.
  std::int64_t m = 0;
  /// Skips the initial fit and starts from this estimate instead.
  std::optional<Coefficients> beta0;
  QrOptions qr;

  void validate() const;
  double scale_for_round(int g) const;
};

struct RoundRecord {
  int round = 0;
  double bandwidth = 0.0;
  double c = 1.0;
  Coefficients beta;
  /// Aggregated statistics that produced `beta`; v / n estimates D.
  LocalStats agg;
  double score_norm = 0.0;
  int cg_iterations = 0;
};

struct FitDiagnostics {
  Coefficients beta0;
  std::vector<RoundRecord> rounds;
  std::int64_t n = 0;
  std::int64_t m = 0;
};

struct DcResult {
  Coefficients beta;
  FitDiagnostics diagnostics;
};

/// Multi-round divide-and-conquer LEQR. Solver failures are rethrown with the
/// offending round in the message.
DcResult dc_leqr(std::span<const Batch> partitions, const DcConfig& cfg);

/// Merged statistics of one round, computed batch by batch in order.
LocalStats aggregate_stats(std::span<const Batch> partitions, const Coefficients& beta0, Bandwidth h,
                           QuantileLevel tau);

/// sum_i x_i x_i' over all partitions.
Matrix gram_sum(std::span<const Batch> partitions);

}  // namespace memquant

#endif  // MEMQUANT_LEQR_HPP

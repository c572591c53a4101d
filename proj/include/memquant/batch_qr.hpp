// batch_qr.hpp
//
// Classical (unsmoothed) quantile regression on a single in-memory batch,
// an exhaustive vertex oracle for tiny instances, and the interpolated
// sample quantile.

#ifndef MEMQUANT_BATCH_QR_HPP
#define MEMQUANT_BATCH_QR_HPP

#include "memquant/core.hpp"

#include <span>

namespace memquant {

struct QrOptions {
  /// Damped Newton steps allowed per bandwidth stage.
  int newton_steps = 30;
  /// Exchange (simplex) pivots allowed while polishing to the exact vertex.
  int max_pivots = 0;  // 0 means 50 * (n + p')
  /// Continuation stops once h drops below h0 * max(floor_ratio, m^(-3/4)).
  double floor_ratio = 1e-3;
  /// Stage stopping rule: score norm <= score_tol * m or step < step_tol.
  double score_tol = 1e-8;
  double step_tol = 1e-10;
};

struct QrFit {
  Coefficients beta;
  double objective = 0.0;
  int stages = 0;
  int newton_steps = 0;
  int pivots = 0;
};

/// Minimises sum_i rho_tau(y_i - x_i' beta). Requires at least p' + 1 rows and
/// a full-rank design; throws RankDeficient or NoConvergence otherwise.
QrFit solve_qr_fit(const Batch& batch, QuantileLevel tau, const QrOptions& opts = {});

Coefficients solve_qr(const Batch& batch, QuantileLevel tau, const QrOptions& opts = {});

/// Brute force over every size-p' subset of rows whose interpolation is
/// well posed. Limited to n <= 30 and p <= 3 (TooLarge otherwise).
Coefficients qr_vertex_oracle(const Batch& batch, QuantileLevel tau);

/// (1 - gamma) Y_(j) + gamma Y_(j+1) with j = floor(tau (m + 1)),
/// gamma = tau (m + 1) - j. Throws QuantileOutOfRange if j or j + 1 leaves
/// [1, m]; when gamma is exactly zero only Y_(j) is needed.
double sample_quantile(std::span<const double> values, QuantileLevel tau);

}  // namespace memquant

#endif  // MEMQUANT_BATCH_QR_HPP

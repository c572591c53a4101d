// inference.hpp
//
// Sandwich variance, normal confidence intervals for v' beta(tau), the
// indicator score norm used to pick bandwidth constants, and the
// estimated-versus-true variance ratio.

#ifndef MEMQUANT_INFERENCE_HPP
#define MEMQUANT_INFERENCE_HPP

#include "memquant/core.hpp"
#include "memquant/leqr.hpp"

#include <span>
#include <vector>

namespace memquant {

/// d_hat estimates D = E[X X' f(0|X)], sigma_hat estimates E[X X'].
struct VarianceEstimate {
  Matrix d_hat;
  Matrix sigma_hat;
  std::int64_t n = 0;
};

/// d_hat = agg.v / n, sigma_hat = xx_sum / n. Throws CountMismatch when
/// agg.count != n.
VarianceEstimate build_variance_estimate(const LocalStats& agg, const Matrix& xx_sum, std::int64_t n);

/// v' d^{-1} sigma d^{-1} v, with d^{-1} v obtained by conjugate gradient.
double sandwich_variance(const Matrix& d, const Matrix& sigma, const Vector& v);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double center() const noexcept { return 0.5 * (lo + hi); }
  double half_width() const noexcept { return 0.5 * (hi - lo); }
  bool contains(double value) const noexcept { return lo <= value && value <= hi; }
};

/// (1 - alpha) normal interval v'beta +- n^{-1/2} sqrt(tau (1 - tau) v' D^-1 S D^-1 v) z_{alpha/2}.
Interval confidence_interval(const Coefficients& beta, const Vector& v, const VarianceEstimate& ve, QuantileLevel tau,
                             double alpha = 0.05);

/// Upper alpha/2 point of the standard normal.
double normal_critical_value(double alpha);

/// || (1/n) sum_i x_i (1{y_i - x_i' beta >= 0} + tau - 1) ||_2, accumulated
/// batch by batch.
double score_norm(std::span<const Batch> partitions, const Coefficients& beta, QuantileLevel tau);

/// Per-batch partial sum of the indicator score (an O(p') message).
Vector score_partial(const Batch& batch, const Coefficients& beta, QuantileLevel tau);

struct AdaptiveChoice {
  double c = 1.0;
  double score = 0.0;
  Coefficients beta;
  LocalStats agg;
  int cg_iterations = 0;
  /// Candidates whose solve failed and were skipped.
  int skipped = 0;
};

/// Runs one round per candidate constant from the same previous estimate and
/// keeps the one with the smallest score norm; ties go to the smaller
/// constant, then to the earlier entry. Residuals are computed once per batch
/// and shared by all candidates.
AdaptiveChoice adaptive_bandwidth(std::span<const Batch> partitions, const Coefficients& beta_prev,
                                  double base_bandwidth, std::span<const double> candidates, QuantileLevel tau);

/// sqrt(v' d^-1 sigma d^-1 v / true_variance).
double variance_ratio(const VarianceEstimate& ve, const Vector& v, double true_variance);

}  // namespace memquant

#endif  // MEMQUANT_INFERENCE_HPP

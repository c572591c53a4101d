// baselines.hpp
//
// Comparators for the LEQR estimators: averaging per-batch quantile
// regression fits, quantile regression on the pooled data, the averaged
// sample quantile, and the first-order bias that averaging leaves behind.

#ifndef MEMQUANT_BASELINES_HPP
#define MEMQUANT_BASELINES_HPP

#include "memquant/batch_qr.hpp"
#include "memquant/core.hpp"

#include <span>
#include <vector>

namespace memquant {

/// Unweighted mean of solve_qr over the partitions. Solver errors name the
/// failing batch.
Coefficients naive_dc(std::span<const Batch> partitions, QuantileLevel tau, const QrOptions& opts = {});

/// solve_qr on everything at once.
Coefficients qr_all(const Batch& all_data, QuantileLevel tau, const QrOptions& opts = {});

/// Mean of the per-batch sample quantiles.
double naive_dc_quantile(std::span<const std::vector<double>> batches, QuantileLevel tau);

/// b / m with b = -tau (1 - tau) f'(beta) / (2 f(beta)^3).
double theorem4_bias(double f_at_beta, double f_prime_at_beta, QuantileLevel tau, std::int64_t m);

}  // namespace memquant

#endif  // MEMQUANT_BASELINES_HPP

#include "memquant/baselines.hpp"

#include <string>

namespace memquant {

Coefficients naive_dc(std::span<const Batch> partitions, QuantileLevel tau, const QrOptions& opts) {
  if (partitions.empty()) throw Error(ErrorKind::InvalidArgument, "no partitions");
  Coefficients sum;
  for (std::size_t k = 0; k < partitions.size(); ++k) {
    Coefficients beta;
    try {
      beta = solve_qr(partitions[k], tau, opts);
    } catch (const Error& e) {
      throw Error(e.kind(), "batch " + std::to_string(k) + ": " + e.detail());
    }
    if (k == 0) {
      sum = beta;
    } else {
      if (beta.size() != sum.size()) throw Error(ErrorKind::DimensionMismatch, "batches differ in dimension");
      sum += beta;
    }
  }
  return sum / static_cast<double>(partitions.size());
}

Coefficients qr_all(const Batch& all_data, QuantileLevel tau, const QrOptions& opts) {
  return solve_qr(all_data, tau, opts);
}

double naive_dc_quantile(std::span<const std::vector<double>> batches, QuantileLevel tau) {
  if (batches.empty()) throw Error(ErrorKind::InvalidArgument, "no batches");
  double sum = 0.0;
  for (const auto& b : batches) sum += sample_quantile(b, tau);
  return sum / static_cast<double>(batches.size());
}

double theorem4_bias(double f_at_beta, double f_prime_at_beta, QuantileLevel tau, std::int64_t m) {
  if (!(f_at_beta > 0.0)) throw Error(ErrorKind::InvalidArgument, "density must be positive");
  if (m < 1) throw Error(ErrorKind::InvalidArgument, "batch size must be positive");
  const double t = tau.value();
  const double b = -t * (1.0 - t) * f_prime_at_beta / (2.0 * f_at_beta * f_at_beta * f_at_beta);
  return b / static_cast<double>(m);
}

}  // namespace memquant

#include "memquant/inference.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>

namespace memquant {

VarianceEstimate build_variance_estimate(const LocalStats& agg, const Matrix& xx_sum, std::int64_t n) {
  if (n <= 0 || agg.count != n) {
    throw Error(ErrorKind::CountMismatch, "statistics cover " + std::to_string(agg.count) + " rows but n = " +
                                              std::to_string(n));
  }
  if (xx_sum.rows() != agg.dim() || xx_sum.cols() != agg.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "gram matrix does not match the statistics dimension");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return VarianceEstimate{agg.v * inv_n, xx_sum * inv_n, n};
}

double sandwich_variance(const Matrix& d, const Matrix& sigma, const Vector& v) {
  CgOptions opts;
  opts.tol = 1e-12;
  opts.max_iter = static_cast<int>(std::max<Eigen::Index>(50 * v.size(), 50));
  try {
    const Vector w = cg_solve(d, v, opts).x;
    return w.dot(sigma * w);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotConverged || e.kind() == ErrorKind::NotSymmetric) {
      throw Error(ErrorKind::SingularSystem, std::string("cannot apply D^-1: ") + e.what());
    }
    throw;
  }
}

double normal_critical_value(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
  const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 1.0 - alpha / 2.0);
}

Interval confidence_interval(const Coefficients& beta, const Vector& v, const VarianceEstimate& ve, QuantileLevel tau,
                             double alpha) {
  if (v.size() != beta.size()) throw Error(ErrorKind::DimensionMismatch, "direction does not match the estimate");
  if (v.isZero(0.0)) throw Error(ErrorKind::InvalidArgument, "direction must be nonzero");
  const double z = normal_critical_value(alpha);
  const double t = tau.value();
  const double sandwich = sandwich_variance(ve.d_hat, ve.sigma_hat, v);
  const double half = std::sqrt(t * (1.0 - t) * std::max(sandwich, 0.0) / static_cast<double>(ve.n)) * z;
  const double center = v.dot(beta);
  return Interval{center - half, center + half};
}

Vector score_partial(const Batch& batch, const Coefficients& beta, QuantileLevel tau) {
  if (beta.size() != batch.dim()) throw Error(ErrorKind::DimensionMismatch, "beta does not match the batch");
  const Vector r = batch.y - batch.design * beta;
  const double t = tau.value();
  const Vector ind = r.unaryExpr([t](double ri) { return (ri >= 0.0 ? 1.0 : 0.0) + t - 1.0; });
  return batch.design.transpose() * ind;
}

double score_norm(std::span<const Batch> partitions, const Coefficients& beta, QuantileLevel tau) {
  Vector total = Vector::Zero(beta.size());
  std::int64_t n = 0;
  for (const auto& batch : partitions) {
    if (batch.empty()) continue;
    total += score_partial(batch, beta, tau);
    n += static_cast<std::int64_t>(batch.size());
  }
  if (n == 0) return 0.0;
  return total.norm() / static_cast<double>(n);
}

AdaptiveChoice adaptive_bandwidth(std::span<const Batch> partitions, const Coefficients& beta_prev,
                                  double base_bandwidth, std::span<const double> candidates, QuantileLevel tau) {
  if (candidates.empty()) throw Error(ErrorKind::InvalidArgument, "candidate list is empty");
  if (partitions.empty()) throw Error(ErrorKind::InvalidArgument, "no partitions");
  const int dim = static_cast<int>(beta_prev.size());
  const auto count = candidates.size();

  std::vector<LocalStats> stats(count, LocalStats::zero(dim));
  for (const auto& batch : partitions) {
    const Vector r = batch.y - batch.design * beta_prev;
    for (std::size_t k = 0; k < count; ++k) {
      stats[k] += compute_local_stats_from_residuals(batch, r, Bandwidth(candidates[k] * base_bandwidth), tau);
    }
  }

  std::vector<StepResult> steps(count);
  std::vector<char> ok(count, 0);
  int solved = 0;
  for (std::size_t k = 0; k < count; ++k) {
    try {
      steps[k] = solve_step(stats[k], beta_prev);
      ok[k] = 1;
      ++solved;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularSystem) throw;
    }
  }
  if (solved == 0) throw Error(ErrorKind::SingularSystem, "every bandwidth candidate failed to solve");

  // One pass per batch scores every surviving candidate at once.
  Matrix betas(dim, solved);
  std::vector<std::size_t> index;
  index.reserve(static_cast<std::size_t>(solved));
  for (std::size_t k = 0; k < count; ++k) {
    if (!ok[k]) continue;
    betas.col(static_cast<Eigen::Index>(index.size())) = steps[k].beta;
    index.push_back(k);
  }
  Matrix totals = Matrix::Zero(dim, solved);
  std::int64_t n = 0;
  const double t = tau.value();
  for (const auto& batch : partitions) {
    Matrix ind = (batch.y.replicate(1, solved) - batch.design * betas).unaryExpr([t](double ri) {
      return (ri >= 0.0 ? 1.0 : 0.0) + t - 1.0;
    });
    totals.noalias() += batch.design.transpose() * ind;
    n += static_cast<std::int64_t>(batch.size());
  }

  AdaptiveChoice best;
  best.score = std::numeric_limits<double>::infinity();
  std::size_t best_k = 0;
  for (std::size_t j = 0; j < index.size(); ++j) {
    const std::size_t k = index[j];
    const double s = totals.col(static_cast<Eigen::Index>(j)).norm() / static_cast<double>(n);
    const bool better = s < best.score || (s == best.score && candidates[k] < best.c);
    if (better) {
      best.score = s;
      best.c = candidates[k];
      best_k = k;
    }
  }
  best.beta = steps[best_k].beta;
  best.agg = std::move(stats[best_k]);
  best.cg_iterations = steps[best_k].cg_iterations;
  best.skipped = static_cast<int>(count) - solved;
  return best;
}

double variance_ratio(const VarianceEstimate& ve, const Vector& v, double true_variance) {
  if (!(true_variance > 0.0)) throw Error(ErrorKind::InvalidArgument, "true variance must be positive");
  return std::sqrt(sandwich_variance(ve.d_hat, ve.sigma_hat, v) / true_variance);
}

}  // namespace memquant

#include "memquant/leqr.hpp"

#include "memquant/inference.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace memquant {

LocalStats LocalStats::zero(int dim) {
  return LocalStats{Vector::Zero(dim), Matrix::Zero(dim, dim), 0};
}

LocalStats& LocalStats::operator+=(const LocalStats& other) {
  if (other.dim() != dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                "cannot merge statistics of dimension " + std::to_string(dim()) + " and " + std::to_string(other.dim()));
  }
  u += other.u;
  v += other.v;
  count += other.count;
  return *this;
}

LocalStats merge(const LocalStats& a, const LocalStats& b) {
  LocalStats out = a;
  out += b;
  return out;
}

LocalStats compute_local_stats_from_residuals(const Batch& batch, const Vector& residuals, Bandwidth h,
                                              QuantileLevel tau) {
  const auto dim = batch.dim();
  const double hv = h.value();
  const double t = tau.value();
  LocalStats out = LocalStats::zero(dim);
  out.count = static_cast<std::int64_t>(batch.size());
  if (batch.empty()) return out;

  Vector coef(residuals.size());
  std::vector<Eigen::Index> window;
  std::vector<double> weights;
  for (Eigen::Index i = 0; i < residuals.size(); ++i) {
    const double s = residuals(i) / hv;
    const double kernel = smooth_h_prime(s);
    coef(i) = smooth_h(s) + t - 1.0;
    if (kernel > 0.0) {
      coef(i) += batch.y(i) / hv * kernel;
      window.push_back(i);
      weights.push_back(kernel / hv);
    }
  }
  out.u.noalias() = batch.design.transpose() * coef;
  if (!window.empty()) {
    const Matrix xw = batch.design(window, Eigen::all);
    const Eigen::Map<const Vector> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
    out.v.noalias() = xw.transpose() * w.asDiagonal() * xw;
    out.v = 0.5 * (out.v + out.v.transpose()).eval();
  }
  return out;
}

LocalStats compute_local_stats(const Batch& batch, const Coefficients& beta0, Bandwidth h, QuantileLevel tau) {
  if (beta0.size() != batch.dim()) throw Error(ErrorKind::DimensionMismatch, "beta0 does not match the batch dimension");
  require_finite(beta0, "beta0");
  if (batch.empty()) return LocalStats::zero(batch.dim());
  return compute_local_stats_from_residuals(batch, batch.y - batch.design * beta0, h, tau);
}

void accumulate_observation(LocalStats& acc, double y, const Vector& x, const Coefficients& beta0, Bandwidth h,
                            QuantileLevel tau) {
  const double hv = h.value();
  const double s = (y - x.dot(beta0)) / hv;
  const double kernel = smooth_h_prime(s);
  acc.u.noalias() += (smooth_h(s) + tau.value() - 1.0 + y / hv * kernel) * x;
  if (kernel > 0.0) acc.v.noalias() += (kernel / hv) * x * x.transpose();
  ++acc.count;
}

StepResult solve_step(const LocalStats& agg, const std::optional<Vector>& x0) {
  if (agg.v.rows() != agg.dim() || agg.v.cols() != agg.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "statistics have inconsistent shapes");
  }
  if (!agg.u.allFinite() || !agg.v.allFinite()) throw Error(ErrorKind::SingularSystem, "statistics are not finite");
  CgOptions opts;
  opts.tol = 1e-10;
  try {
    auto cg = cg_solve(agg.v, agg.u, opts, x0);
    // Polish towards round-off so the estimate does not depend on how the
    // sums were grouped. Keep the first solve if round-off stalls this.
    CgOptions polish;
    polish.tol = 1e-13;
    try {
      const auto fine = cg_solve(agg.v, agg.u, polish, cg.x);
      cg.iterations += fine.iterations;
      cg.x = fine.x;
      cg.residual = fine.residual;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotConverged) throw;
    }
    return StepResult{cg.x, cg.iterations, cg.residual};
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotConverged || e.kind() == ErrorKind::NotSymmetric) {
      throw Error(ErrorKind::SingularSystem, std::string("V beta = U could not be solved (") + e.what() + ")");
    }
    throw;
  }
}

std::int64_t bandwidth_dimension(int covariates) { return covariates < 1 ? 1 : covariates; }

Bandwidth bandwidth_schedule(int g, std::int64_t p, std::int64_t m, std::int64_t n, double c) {
  if (g < 1) throw Error(ErrorKind::InvalidArgument, "round index starts at 1");
  if (!(c > 0.0)) throw Error(ErrorKind::InvalidArgument, "scaling constant must be positive");
  if (p < 1 || p >= m || m > n) {
    throw Error(ErrorKind::InvalidDimensions, "bandwidth schedule needs 1 <= p < m <= n, got p=" + std::to_string(p) +
                                                  " m=" + std::to_string(m) + " n=" + std::to_string(n));
  }
  const double floor = std::sqrt(static_cast<double>(p) / static_cast<double>(n));
  const double shrink = std::pow(static_cast<double>(p) / static_cast<double>(m), std::ldexp(1.0, g - 2));
  return Bandwidth(c * std::max(floor, shrink));
}

int required_rounds(std::int64_t p, std::int64_t m, std::int64_t n) {
  if (p < 1 || p >= m || m > n) {
    throw Error(ErrorKind::InvalidDimensions, "required_rounds needs 1 <= p < m <= n, got p=" + std::to_string(p) +
                                                  " m=" + std::to_string(m) + " n=" + std::to_string(n));
  }
  const double ratio = std::log(std::sqrt(static_cast<double>(p) / static_cast<double>(n))) /
                       std::log(static_cast<double>(p) / static_cast<double>(m));
  const double bound = 2.0 + std::log(ratio) / std::log(2.0);
  // Values within rounding of an integer count as that integer.
  const int q = static_cast<int>(std::ceil(bound - 1e-12));
  return std::max(q, 1);
}

void DcConfig::validate() const {
  if (q < 1) throw Error(ErrorKind::InvalidArgument, "q must be at least 1");
  if (c.empty()) throw Error(ErrorKind::InvalidArgument, "at least one scaling constant is required");
  if (c.size() != 1 && static_cast<int>(c.size()) != q) {
    throw Error(ErrorKind::InvalidArgument, "scaling constants must be one value or one per round");
  }
  for (const double v : c) {
    if (!(v > 0.0)) throw Error(ErrorKind::InvalidArgument, "scaling constants must be positive");
  }
  if (bandwidths) {
    if (static_cast<int>(bandwidths->size()) != q) {
      throw Error(ErrorKind::InvalidArgument, "explicit bandwidth list must hold q values");
    }
    for (const double h : *bandwidths) {
      if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "explicit bandwidths must be positive");
    }
  }
  if (adaptive_grid) {
    if (adaptive_grid->empty()) throw Error(ErrorKind::InvalidArgument, "adaptive grid is empty");
    for (const double v : *adaptive_grid) {
      if (!(v > 0.0)) throw Error(ErrorKind::InvalidArgument, "adaptive grid values must be positive");
    }
  }
}

double DcConfig::scale_for_round(int g) const {
  return c.size() == 1 ? c.front() : c[static_cast<std::size_t>(g - 1)];
}

LocalStats aggregate_stats(std::span<const Batch> partitions, const Coefficients& beta0, Bandwidth h,
                           QuantileLevel tau) {
  if (partitions.empty()) throw Error(ErrorKind::InvalidArgument, "no partitions");
  LocalStats agg = LocalStats::zero(partitions.front().dim());
  for (const auto& batch : partitions) agg += compute_local_stats(batch, beta0, h, tau);
  return agg;
}

Matrix gram_sum(std::span<const Batch> partitions) {
  if (partitions.empty()) throw Error(ErrorKind::InvalidArgument, "no partitions");
  const int dim = partitions.front().dim();
  Matrix xx = Matrix::Zero(dim, dim);
  for (const auto& batch : partitions) {
    if (batch.dim() != dim) throw Error(ErrorKind::DimensionMismatch, "partitions differ in dimension");
    xx.selfadjointView<Eigen::Lower>().rankUpdate(batch.design.transpose());
  }
  xx.triangularView<Eigen::StrictlyUpper>() = xx.transpose();
  return xx;
}

namespace {

Error with_round(const Error& e, int g) {
  std::ostringstream msg;
  msg << "round " << g << ": " << e.detail();
  return Error(e.kind(), msg.str());
}

}  // namespace

DcResult dc_leqr(std::span<const Batch> partitions, const DcConfig& cfg) {
  cfg.validate();
  if (partitions.empty()) throw Error(ErrorKind::InvalidArgument, "no partitions");
  const int dim = partitions.front().dim();
  for (std::size_t k = 0; k < partitions.size(); ++k) {
    if (partitions[k].empty()) throw Error(ErrorKind::InvalidArgument, "partition " + std::to_string(k) + " is empty");
    if (partitions[k].dim() != dim) throw Error(ErrorKind::DimensionMismatch, "partitions differ in dimension");
  }
  if (cfg.initial_partition >= partitions.size()) {
    throw Error(ErrorKind::InvalidArgument, "initial partition index out of range");
  }

  DcResult result;
  auto& diag = result.diagnostics;
  diag.n = static_cast<std::int64_t>(total_count(partitions));
  diag.m = cfg.m > 0 ? cfg.m : static_cast<std::int64_t>(partitions[cfg.initial_partition].size());
  const auto p = bandwidth_dimension(dim - 1);

  if (cfg.beta0) {
    if (cfg.beta0->size() != dim) throw Error(ErrorKind::DimensionMismatch, "beta0 does not match the data");
    diag.beta0 = *cfg.beta0;
  } else {
    try {
      diag.beta0 = solve_qr(partitions[cfg.initial_partition], cfg.tau, cfg.qr);
    } catch (const Error& e) {
      throw with_round(e, 1);
    }
  }

  Coefficients beta = diag.beta0;
  for (int g = 1; g <= cfg.q; ++g) {
    RoundRecord rec;
    rec.round = g;
    try {
      const double base = cfg.bandwidths ? (*cfg.bandwidths)[static_cast<std::size_t>(g - 1)]
                                         : bandwidth_schedule(g, p, diag.m, diag.n).value();
      if (cfg.adaptive_grid && !cfg.bandwidths) {
        const auto choice = adaptive_bandwidth(partitions, beta, base, *cfg.adaptive_grid, cfg.tau);
        rec.c = choice.c;
        rec.bandwidth = choice.c * base;
        rec.agg = choice.agg;
        rec.beta = choice.beta;
        rec.cg_iterations = choice.cg_iterations;
        rec.score_norm = choice.score;
      } else {
        rec.c = cfg.bandwidths ? 1.0 : cfg.scale_for_round(g);
        rec.bandwidth = rec.c * base;
        rec.agg = aggregate_stats(partitions, beta, Bandwidth(rec.bandwidth), cfg.tau);
        const auto step = solve_step(rec.agg, beta);
        rec.beta = step.beta;
        rec.cg_iterations = step.cg_iterations;
        rec.score_norm = score_norm(partitions, rec.beta, cfg.tau);
      }
    } catch (const Error& e) {
      throw with_round(e, g);
    }
    beta = rec.beta;
    diag.rounds.push_back(std::move(rec));
  }
  result.beta = beta;
  return result;
}

}  // namespace memquant

#include "memquant/batch_qr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace memquant {

namespace {

// Smoothed check loss x (H(x/h) + tau - 1) summed over residuals.
double smoothed_objective(const Vector& r, double h, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    total += r(i) * (smooth_h(r(i) / h) + tau - 1.0);
  }
  return total;
}

void check_shape(const Batch& batch) {
  const auto dim = static_cast<std::size_t>(batch.dim());
  if (batch.size() < dim + 1) {
    throw Error(ErrorKind::InvalidArgument, "quantile regression needs at least p' + 1 = " + std::to_string(dim + 1) +
                                                " observations, got " + std::to_string(batch.size()));
  }
}

// Newton-type iterations on the smoothed objective at bandwidth h. The
// direction is the LEQR step: (sum x x' H'/h)^{-1} sum x {H + tau - 1 + r H'/h}.
int smoothed_stage(const Batch& batch, double tau, double h, Coefficients& beta, const QrOptions& opts) {
  const auto& x = batch.design;
  const auto dim = x.cols();
  const double m = static_cast<double>(batch.size());
  Vector r = batch.y - x * beta;
  double f = smoothed_objective(r, h, tau);
  int steps = 0;
  std::vector<Eigen::Index> window;
  for (; steps < opts.newton_steps; ++steps) {
    Vector score = Vector::Zero(dim);
    Matrix v = Matrix::Zero(dim, dim);
    Vector kink(r.size());
    window.clear();
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const double u = r(i) / h;
      kink(i) = smooth_h(u) + tau - 1.0;
      if (u > -1.0 && u < 1.0) {
        window.push_back(i);
        kink(i) += u * smooth_h_prime(u);
      }
    }
    score.noalias() = x.transpose() * kink;
    if (score.norm() <= opts.score_tol * m) break;
    if (!window.empty()) {
      const Matrix xw = x(window, Eigen::all);
      Vector w(static_cast<Eigen::Index>(window.size()));
      for (std::size_t k = 0; k < window.size(); ++k) w(static_cast<Eigen::Index>(k)) = smooth_h_prime(r(window[k]) / h) / h;
      v.noalias() = xw.transpose() * w.asDiagonal() * xw;
    }
    const double ridge = 1e-8 * std::max(v.trace() / static_cast<double>(dim), 1.0 / h);
    v.diagonal().array() += ridge;
    const Vector step = v.ldlt().solve(score);
    if (!step.allFinite()) break;

    double t = 1.0;
    bool accepted = false;
    const double slope = score.dot(step);
    for (int back = 0; back < 40; ++back) {
      const Coefficients trial = beta + t * step;
      const Vector r_trial = batch.y - x * trial;
      const double f_trial = smoothed_objective(r_trial, h, tau);
      if (f_trial <= f - 1e-4 * t * slope) {
        beta = trial;
        r = r_trial;
        f = f_trial;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted || (t * step).norm() < opts.step_tol) break;
  }
  return steps;
}

// Picks p' rows, smallest |residual| first, that form a nonsingular square system.
std::vector<Eigen::Index> initial_basis(const Batch& batch, const Vector& r) {
  const auto dim = batch.design.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(r.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&r](Eigen::Index a, Eigen::Index b) { return std::abs(r(a)) < std::abs(r(b)); });
  std::vector<Eigen::Index> basis;
  for (const auto i : order) {
    basis.push_back(i);
    Eigen::FullPivLU<Matrix> lu(batch.design(basis, Eigen::all));
    lu.setThreshold(1e-10);
    if (lu.rank() < static_cast<Eigen::Index>(basis.size())) basis.pop_back();
    if (static_cast<Eigen::Index>(basis.size()) == dim) break;
  }
  if (static_cast<Eigen::Index>(basis.size()) < dim) {
    throw Error(ErrorKind::RankDeficient, "no nonsingular interpolation basis exists");
  }
  return basis;
}

struct Breakpoint {
  double t;
  double weight;
  Eigen::Index row;
};

// Exchange method on the vertices of the check-loss polyhedron: move along
// the steepest edge that releases one basis row, exact line search over the
// residual sign changes, swap the first row that stops the descent into the
// basis. Ends at a vertex with no descending edge.
int vertex_polish(const Batch& batch, double tau, Coefficients& beta, int max_pivots) {
  const auto& x = batch.design;
  const auto dim = x.cols();
  const auto n = x.rows();
  std::vector<Eigen::Index> basis = initial_basis(batch, batch.y - x * beta);
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  for (const auto i : basis) in_basis[static_cast<std::size_t>(i)] = 1;

  const double y_scale = 1.0 + batch.y.cwiseAbs().maxCoeff();
  int pivots = 0;
  std::vector<Breakpoint> breaks;
  while (true) {
    const Eigen::PartialPivLU<Matrix> lu(x(basis, Eigen::all));
    beta = lu.solve(batch.y(basis));
    const Vector r = batch.y - x * beta;
    const double zero_tol = 1e-11 * y_scale;

    Vector g = Vector::Zero(dim);
    std::vector<Eigen::Index> zeros;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)]) continue;
      if (std::abs(r(i)) <= zero_tol) {
        zeros.push_back(i);
      } else {
        g.noalias() += (r(i) > 0.0 ? tau : tau - 1.0) * x.row(i).transpose();
      }
    }
    // Columns of inv(X_B) are the edge directions.
    const Matrix inv_b = lu.inverse();
    const Vector z = inv_b.transpose() * g;
    const double g_scale = 1.0 + g.cwiseAbs().maxCoeff();

    double best = -1e-12 * g_scale * static_cast<double>(n);
    Eigen::Index best_k = -1;
    double best_sign = 0.0;
    for (Eigen::Index k = 0; k < dim; ++k) {
      for (const double sign : {1.0, -1.0}) {
        double slope = sign > 0 ? -z(k) + (1.0 - tau) : z(k) + tau;
        for (const auto i : zeros) {
          const double a = sign * x.row(i).dot(inv_b.col(k));
          slope += a > 0 ? (1.0 - tau) * a : -tau * a;
        }
        if (slope < best) {
          best = slope;
          best_k = k;
          best_sign = sign;
        }
      }
    }
    if (best_k < 0) return pivots;
    if (pivots == max_pivots) {
      throw Error(ErrorKind::NoConvergence, "vertex exchange exceeded " + std::to_string(max_pivots) + " pivots");
    }
    ++pivots;

    const Vector d = best_sign * inv_b.col(best_k);
    const Vector a = x * d;
    breaks.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)] || a(i) == 0.0 || std::abs(r(i)) <= zero_tol) continue;
      const double t = r(i) / a(i);
      if (t > 0.0) breaks.push_back({t, std::abs(a(i)), i});
    }
    std::sort(breaks.begin(), breaks.end(), [](const Breakpoint& lhs, const Breakpoint& rhs) {
      return lhs.t < rhs.t || (lhs.t == rhs.t && lhs.row < rhs.row);
    });
    double slope = best;
    Eigen::Index entering = -1;
    for (const auto& bp : breaks) {
      slope += bp.weight;
      if (slope >= 0.0) {
        entering = bp.row;
        break;
      }
    }
    if (entering < 0) throw Error(ErrorKind::NoConvergence, "unbounded descent direction in vertex exchange");
    const auto leaving = basis[static_cast<std::size_t>(best_k)];
    in_basis[static_cast<std::size_t>(leaving)] = 0;
    in_basis[static_cast<std::size_t>(entering)] = 1;
    basis[static_cast<std::size_t>(best_k)] = entering;
  }
}

}  // namespace

QrFit solve_qr_fit(const Batch& batch, QuantileLevel tau, const QrOptions& opts) {
  check_shape(batch);
  const auto& x = batch.design;
  const auto dim = x.cols();
  const auto n = x.rows();

  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < dim) {
    throw Error(ErrorKind::RankDeficient, "design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(dim));
  }

  QrFit fit;
  fit.beta = qr.solve(batch.y);
  Vector r = batch.y - x * fit.beta;
  const double scale = r.cwiseAbs().mean();
  if (scale <= 1e-14 * (1.0 + batch.y.cwiseAbs().maxCoeff())) {
    fit.objective = qr_objective(batch, fit.beta, tau);
    return fit;
  }

  const double h0 = 2.0 * scale;
  const double floor = h0 * std::max(opts.floor_ratio, std::pow(static_cast<double>(n), -0.75));
  for (double h = h0; h >= floor; h *= 0.5) {
    fit.newton_steps += smoothed_stage(batch, tau.value(), h, fit.beta, opts);
    ++fit.stages;
  }

  const int max_pivots = opts.max_pivots > 0 ? opts.max_pivots : static_cast<int>(50 * (n + dim));
  fit.pivots = vertex_polish(batch, tau.value(), fit.beta, max_pivots);
  fit.objective = qr_objective(batch, fit.beta, tau);
  return fit;
}

Coefficients solve_qr(const Batch& batch, QuantileLevel tau, const QrOptions& opts) {
  return solve_qr_fit(batch, tau, opts).beta;
}

Coefficients qr_vertex_oracle(const Batch& batch, QuantileLevel tau) {
  const auto n = static_cast<int>(batch.size());
  const int dim = batch.dim();
  if (n > 30 || dim > 4) throw Error(ErrorKind::TooLarge, "vertex oracle is limited to n <= 30 and p <= 3");
  if (n < dim) throw Error(ErrorKind::InvalidArgument, "fewer rows than coefficients");

  Coefficients best;
  double best_obj = std::numeric_limits<double>::infinity();
  std::vector<int> pick(static_cast<std::size_t>(dim));
  std::iota(pick.begin(), pick.end(), 0);
  while (true) {
    Eigen::FullPivLU<Matrix> lu(batch.design(pick, Eigen::all));
    lu.setThreshold(1e-10);
    if (lu.isInvertible()) {
      const Coefficients beta = lu.solve(batch.y(pick));
      const double obj = qr_objective(batch, beta, tau);
      if (obj < best_obj) {
        best_obj = obj;
        best = beta;
      }
    }
    // next combination in lexicographic order
    int k = dim - 1;
    while (k >= 0 && pick[static_cast<std::size_t>(k)] == n - dim + k) --k;
    if (k < 0) break;
    ++pick[static_cast<std::size_t>(k)];
    for (int j = k + 1; j < dim; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
  if (!std::isfinite(best_obj)) throw Error(ErrorKind::RankDeficient, "no well-posed interpolation subset");
  return best;
}

double sample_quantile(std::span<const double> values, QuantileLevel tau) {
  const auto m = static_cast<std::int64_t>(values.size());
  if (m == 0) throw Error(ErrorKind::QuantileOutOfRange, "sample quantile of an empty list");
  const double pos = tau.value() * static_cast<double>(m + 1);
  const auto j = static_cast<std::int64_t>(std::floor(pos));
  const double gamma = pos - static_cast<double>(j);
  const bool needs_next = gamma > 0.0;
  if (j < 1 || j > m || (needs_next && j + 1 > m)) {
    throw Error(ErrorKind::QuantileOutOfRange, "tau " + std::to_string(tau.value()) + " too extreme for m = " +
                                                   std::to_string(m));
  }
  std::vector<double> sorted(values.begin(), values.end());
  auto nth = sorted.begin() + (j - 1);
  std::nth_element(sorted.begin(), nth, sorted.end());
  const double lower = *nth;
  if (!needs_next) return lower;
  const double upper = *std::min_element(nth + 1, sorted.end());
  return (1.0 - gamma) * lower + gamma * upper;
}

}  // namespace memquant

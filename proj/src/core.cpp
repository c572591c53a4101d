#include "memquant/core.hpp"

#include <cmath>
#include <algorithm>

namespace memquant {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidDimensions: return "InvalidDimensions";
    case ErrorKind::QuantileOutOfRange: return "QuantileOutOfRange";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::InvalidArity: return "InvalidArity";
    case ErrorKind::Overflow: return "Overflow";
    case ErrorKind::Parse: return "Parse";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

QuantileLevel::QuantileLevel(double tau) : tau_(tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "quantile level must lie in (0, 1), got " + std::to_string(tau));
  }
}

Bandwidth::Bandwidth(double h) : h_(h) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error(ErrorKind::InvalidArgument, "bandwidth must be positive and finite, got " + std::to_string(h));
  }
}

Batch::Batch(Vector y_in, Matrix design_in) : y(std::move(y_in)), design(std::move(design_in)) {
  if (design.rows() != y.size()) {
    throw Error(ErrorKind::DimensionMismatch, "design rows do not match response length");
  }
  if (design.cols() < 1) {
    throw Error(ErrorKind::DimensionMismatch, "design needs at least the intercept column");
  }
}

Batch Batch::from_covariates(const Vector& y, const Matrix& covariates) {
  if (covariates.rows() != y.size()) {
    throw Error(ErrorKind::DimensionMismatch, "covariate rows do not match response length");
  }
  Matrix design(covariates.rows(), covariates.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(covariates.cols()) = covariates;
  if (!y.allFinite() || !covariates.allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "observations must be finite");
  }
  return Batch(y, std::move(design));
}

Batch Batch::from_observations(std::span<const Observation> observations) {
  if (observations.empty()) {
    throw Error(ErrorKind::InvalidArgument, "cannot infer dimension of an empty observation list");
  }
  const auto p = observations.front().x.size();
  Vector y(static_cast<Eigen::Index>(observations.size()));
  Matrix x(static_cast<Eigen::Index>(observations.size()), p);
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& obs = observations[i];
    if (obs.x.size() != p) {
      throw Error(ErrorKind::DimensionMismatch, "observation " + std::to_string(i) + " has the wrong covariate count");
    }
    const auto row = static_cast<Eigen::Index>(i);
    y(row) = obs.y;
    if (p > 0) x.row(row) = obs.x.transpose();
  }
  return from_covariates(y, x);
}

Batch Batch::slice(std::size_t first, std::size_t count) const {
  if (first + count > size()) {
    throw Error(ErrorKind::InvalidArgument, "slice out of range");
  }
  const auto f = static_cast<Eigen::Index>(first);
  const auto c = static_cast<Eigen::Index>(count);
  return Batch(y.segment(f, c), design.middleRows(f, c));
}

Vector with_intercept(const Vector& x) {
  Vector out(x.size() + 1);
  out(0) = 1.0;
  out.tail(x.size()) = x;
  return out;
}

std::vector<Batch> split_sequential(const Batch& data, std::size_t m) {
  if (m == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be positive");
  std::vector<Batch> out;
  out.reserve((data.size() + m - 1) / m);
  for (std::size_t first = 0; first < data.size(); first += m) {
    out.push_back(data.slice(first, std::min(m, data.size() - first)));
  }
  return out;
}

std::vector<Batch> split_even(const Batch& data, std::size_t parts) {
  if (parts == 0 || parts > data.size()) {
    throw Error(ErrorKind::InvalidArgument, "cannot split " + std::to_string(data.size()) + " rows into " +
                                                std::to_string(parts) + " nonempty parts");
  }
  std::vector<Batch> out;
  out.reserve(parts);
  const std::size_t base = data.size() / parts;
  const std::size_t extra = data.size() % parts;
  std::size_t first = 0;
  for (std::size_t k = 0; k < parts; ++k) {
    const std::size_t count = base + (k < extra ? 1 : 0);
    out.push_back(data.slice(first, count));
    first += count;
  }
  return out;
}

Batch concatenate(std::span<const Batch> batches) {
  if (batches.empty()) throw Error(ErrorKind::InvalidArgument, "nothing to concatenate");
  const auto dim = batches.front().design.cols();
  const auto n = static_cast<Eigen::Index>(total_count(batches));
  Vector y(n);
  Matrix design(n, dim);
  Eigen::Index row = 0;
  for (const auto& b : batches) {
    if (b.design.cols() != dim) throw Error(ErrorKind::DimensionMismatch, "batches differ in dimension");
    y.segment(row, b.y.size()) = b.y;
    design.middleRows(row, b.y.size()) = b.design;
    row += b.y.size();
  }
  return Batch(std::move(y), std::move(design));
}

std::size_t total_count(std::span<const Batch> batches) {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.size();
  return n;
}

double smooth_h(double u) noexcept {
  if (u <= -1.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const double u2 = u * u;
  return 0.5 + (15.0 / 16.0) * u * (1.0 - u2 * (2.0 / 3.0 - u2 / 5.0));
}

double smooth_h_prime(double u) noexcept {
  if (u <= -1.0 || u >= 1.0) return 0.0;
  const double s = 1.0 - u * u;
  return (15.0 / 16.0) * s * s;
}

double check_loss(double x, QuantileLevel tau) noexcept {
  return x * (tau.value() - (x <= 0.0 ? 1.0 : 0.0));
}

double qr_objective(const Batch& batch, const Coefficients& beta, QuantileLevel tau) {
  const Vector r = batch.y - batch.design * beta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) total += check_loss(r(i), tau);
  return total;
}

Vector unit_diagonal_direction(int dim) {
  return Vector::Constant(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw Error(ErrorKind::InvalidArgument, std::string(what) + " must be finite");
}

}  // namespace memquant

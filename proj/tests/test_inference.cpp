#include "doctest.h"

#include "memquant/inference.hpp"
#include "memquant/leqr.hpp"
#include "memquant/simgen.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace memquant;

namespace {

const double kPhi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);

// Monte-Carlo E[XX'] of the intercept-augmented covariates, in chunks.
Matrix mc_second_moment(int p, std::int64_t rows, std::uint64_t seed) {
  Rng rng(seed, 3);
  Matrix acc = Matrix::Zero(p + 1, p + 1);
  const std::int64_t chunk = 100000;
  for (std::int64_t done = 0; done < rows; done += chunk) {
    Matrix x(chunk, p + 1);
    x.col(0).setOnes();
    x.rightCols(p) = gen_covariates(chunk, p, rng);
    acc.noalias() += x.transpose() * x;
  }
  return acc / static_cast<double>(rows);
}

}  // namespace

TEST_CASE("one observation gives sigma_hat = x x'") {
  Vector y(1);
  y << 0.3;
  Matrix cov(1, 2);
  cov << 0.5, 2.0;
  const Batch b = Batch::from_covariates(y, cov);
  const Batch parts[] = {b};
  const auto s = compute_local_stats(b, Vector::Zero(3), Bandwidth(1.0), QuantileLevel(0.5));
  const auto ve = build_variance_estimate(s, gram_sum(parts), 1);
  const Vector x = b.design.row(0).transpose();
  CHECK(ve.sigma_hat == x * x.transpose());
  CHECK_THROWS_AS(build_variance_estimate(s, gram_sum(parts), 2), Error);
  try {
    build_variance_estimate(s, gram_sum(parts), 2);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CountMismatch);
  }
}

TEST_CASE("D estimate is phi(0) times the Gram matrix under homoscedastic noise") {
  const int p = 3;
  const std::int64_t n = 200000;
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, n, p, 44);
  const QuantileLevel tau(0.5);
  const Batch parts[] = {b};
  const auto s = compute_local_stats(b, true_beta_tau(NoiseModel::HomoscedasticNormal, tau, p), Bandwidth(0.1), tau);
  const auto ve = build_variance_estimate(s, gram_sum(parts), n);
  CHECK((ve.d_hat - ve.d_hat.transpose()).norm() <= 1e-10 * ve.d_hat.norm());
  const Matrix ratio = ve.d_hat.cwiseQuotient(kPhi0 * ve.sigma_hat);
  CHECK(ratio.minCoeff() >= 0.95);
  CHECK(ratio.maxCoeff() <= 1.05);
}

TEST_CASE("intercept-only interval matches the closed-form half-width") {
  const std::int64_t n = 100000;
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, n, 0, 8);
  const QuantileLevel tau(0.5);
  const Batch parts[] = {b};
  const Vector beta = solve_qr(b, tau);
  const auto s = compute_local_stats(b, beta, Bandwidth(0.1), tau);
  const auto ve = build_variance_estimate(s, gram_sum(parts), n);
  const Interval ci = confidence_interval(beta, Vector::Ones(1), ve, tau);
  const double expected = 1.959963984540054 * std::sqrt(std::numbers::pi / 2.0) / std::sqrt(static_cast<double>(n));
  CHECK(ci.half_width() == doctest::Approx(expected).epsilon(0.03));
  CHECK(ci.center() == doctest::Approx(beta(0)).epsilon(1e-12));
  CHECK(ci.contains(beta(0)));
}

TEST_CASE("interval scaling and degenerate level") {
  const Batch b = gen_dataset(NoiseModel::Exponential, 3000, 2, 15);
  const QuantileLevel tau(0.7);
  const Batch parts[] = {b};
  const Vector beta = solve_qr(b, tau);
  const auto s = compute_local_stats(b, beta, Bandwidth(0.3), tau);
  const auto ve = build_variance_estimate(s, gram_sum(parts), 3000);
  Vector v(3);
  v << 0.2, -1.0, 0.7;
  const Interval base = confidence_interval(beta, v, ve, tau);
  const Interval scaled = confidence_interval(beta, 3.5 * v, ve, tau);
  CHECK(scaled.lo == doctest::Approx(3.5 * base.lo).epsilon(1e-10));
  CHECK(scaled.hi == doctest::Approx(3.5 * base.hi).epsilon(1e-10));
  CHECK(confidence_interval(beta, v, ve, tau, 0.01).half_width() > base.half_width());
  const Interval nearly_point = confidence_interval(beta, v, ve, tau, 1.0 - 1e-12);
  CHECK(nearly_point.half_width() <= 1e-9 * base.half_width() * 1e3);
  CHECK(nearly_point.center() == doctest::Approx(v.dot(beta)));
  CHECK_THROWS_AS(confidence_interval(beta, Vector::Zero(3), ve, tau), Error);
  CHECK_THROWS_AS(confidence_interval(beta, v, ve, tau, 0.0), Error);
  CHECK(normal_critical_value(0.05) == doctest::Approx(1.959963984540054).epsilon(1e-12));
}

TEST_CASE("score norm examples") {
  Vector y(4);
  y << 1, 2, 3, 4;
  const Batch b = Batch::from_covariates(y, Matrix(4, 0));
  const Batch parts[] = {b};
  CHECK(score_norm(parts, Vector::Constant(1, 0.0), QuantileLevel(0.5)) == doctest::Approx(0.5));

  const Batch noise = gen_dataset(NoiseModel::HomoscedasticNormal, 1001, 0, 3);
  for (const double t : {0.1, 0.37, 0.8}) {
    std::vector<double> values(noise.y.data(), noise.y.data() + noise.y.size());
    std::sort(values.begin(), values.end());
    const auto k = static_cast<std::size_t>(std::ceil(1001 * t)) - 1;
    const Batch single[] = {noise};
    CHECK(score_norm(single, Vector::Constant(1, values[k]), QuantileLevel(t)) <= 1.0 / 1001 + 1e-12);
  }

  const Batch mixed = gen_dataset(NoiseModel::HomoscedasticNormal, 600, 3, 21);
  const auto split = split_sequential(mixed, 100);
  std::vector<Batch> reversed(split.rbegin(), split.rend());
  const Vector beta = Vector::Ones(4);
  const QuantileLevel tau(0.3);
  CHECK(score_norm(split, beta, tau) == doctest::Approx(score_norm(reversed, beta, tau)).epsilon(1e-14));
  const Batch whole[] = {mixed};
  CHECK(score_norm(split, beta, tau) == doctest::Approx(score_norm(whole, beta, tau)).epsilon(1e-14));
}

TEST_CASE("adaptive bandwidth selection") {
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 5000, 4, 5);
  const auto parts = split_sequential(b, 100);
  const QuantileLevel tau(0.5);
  const Vector beta0 = solve_qr(parts[0], tau);
  const double base = bandwidth_schedule(1, 4, 100, 5000).value();

  const std::vector<double> single{1.7};
  CHECK(adaptive_bandwidth(parts, beta0, base, single, tau).c == 1.7);

  std::vector<double> grid(1000);
  for (int i = 0; i < 1000; ++i) grid[static_cast<std::size_t>(i)] = 0.1 + i * (100.0 - 0.1) / 999.0;
  const auto choice = adaptive_bandwidth(parts, beta0, base, grid, tau);
  const std::vector<double> one{grid[9]};
  CHECK(choice.score <= adaptive_bandwidth(parts, beta0, base, one, tau).score);
  for (const double c : {0.1, 0.5, 2.0, 50.0}) {
    const std::vector<double> alt{c};
    CHECK(choice.score <= adaptive_bandwidth(parts, beta0, base, alt, tau).score);
  }
  CHECK(choice.score == doctest::Approx(score_norm(parts, choice.beta, tau)).epsilon(1e-12));

  const std::vector<double> dup{0.8, 0.8, 0.8};
  const auto d = adaptive_bandwidth(parts, beta0, base, dup, tau);
  CHECK(d.c == 0.8);
  CHECK(d.score == doctest::Approx(adaptive_bandwidth(parts, beta0, base, std::vector<double>{0.8}, tau).score));

  CHECK_THROWS_AS(adaptive_bandwidth(parts, beta0, base, std::vector<double>{}, tau), Error);
}

TEST_CASE("adaptive driver picks per-round constants") {
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 10000, 5, 9);
  const auto parts = split_sequential(b, 100);
  DcConfig cfg;
  cfg.tau = QuantileLevel(0.2);
  cfg.q = 4;
  std::vector<double> grid(200);
  for (int i = 0; i < 200; ++i) grid[static_cast<std::size_t>(i)] = 0.1 + i * 0.05;
  cfg.adaptive_grid = grid;
  const auto fit = dc_leqr(parts, cfg);
  DcConfig plain = cfg;
  plain.adaptive_grid.reset();
  const auto ref = dc_leqr(parts, plain);
  for (std::size_t g = 0; g < 4; ++g) {
    const auto& r = fit.diagnostics.rounds[g];
    CHECK(r.bandwidth == doctest::Approx(r.c * bandwidth_schedule(static_cast<int>(g) + 1, 5, 100, 10000).value()));
    CHECK(std::find(grid.begin(), grid.end(), r.c) != grid.end());
  }
  // Round 1 starts from the same estimate in both fits, so the grid minimum
  // cannot score worse than c = 1 there.
  CHECK(fit.diagnostics.rounds[0].score_norm <= ref.diagnostics.rounds[0].score_norm + 1e-15);
}

TEST_CASE("variance ratio against an independent second-moment oracle") {
  const int p = 3;
  const Matrix exx = mc_second_moment(p, 2000000, 99);
  const Vector v = unit_diagonal_direction(p + 1);
  const Vector w = exx.ldlt().solve(v);
  const double truth = v.dot(w) / (kPhi0 * kPhi0);

  const std::int64_t n = 100000;
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, n, p, 61);
  const auto parts = split_sequential(b, 1000);
  DcConfig cfg;
  cfg.tau = QuantileLevel(0.5);
  cfg.q = required_rounds(p, 1000, n);
  const auto fit = dc_leqr(parts, cfg);
  const auto ve = build_variance_estimate(fit.diagnostics.rounds.back().agg, gram_sum(parts), n);
  const double ratio = variance_ratio(ve, v, truth);
  CHECK(ratio >= 0.9);
  CHECK(ratio <= 1.1);

  CHECK(variance_ratio(ve, v, sandwich_variance(ve.d_hat, ve.sigma_hat, v)) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(variance_ratio(ve, v, 0.0), Error);
}

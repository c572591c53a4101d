#include "doctest.h"

#include "memquant/leqr.hpp"
#include "memquant/simgen.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>

using namespace memquant;

namespace {

double rel_diff(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }
double rel_diff(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

// Straight transcription of the smoothed first-order statistics.
void reference_stats(const Batch& b, const Vector& beta0, double h, double tau, Vector& u, Matrix& v) {
  const int d = b.dim();
  u = Vector::Zero(d);
  v = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < b.design.rows(); ++i) {
    const Vector x = b.design.row(i).transpose();
    const double s = (b.y(i) - x.dot(beta0)) / h;
    double hh = 0.0, hp = 0.0;
    if (s >= 1.0) {
      hh = 1.0;
    } else if (s > -1.0) {
      hh = 0.5 + 15.0 / 16.0 * (s - 2.0 / 3.0 * std::pow(s, 3) + std::pow(s, 5) / 5.0);
      hp = 15.0 / 16.0 * (1 - s * s) * (1 - s * s);
    }
    u += (hh + tau - 1.0 + b.y(i) / h * hp) * x;
    v += hp / h * x * x.transpose();
  }
}

}  // namespace

TEST_CASE("single observation statistics") {
  Vector y(1);
  y << 0.2;
  const Batch b = Batch::from_covariates(y, Matrix(1, 0));
  const auto s = compute_local_stats(b, Vector::Zero(1), Bandwidth(1.0), QuantileLevel(0.5));
  CHECK(s.u(0) == doctest::Approx(0.35536).epsilon(1e-12));
  CHECK(s.v(0, 0) == doctest::Approx(0.864).epsilon(1e-12));
  CHECK(s.count == 1);
  CHECK(solve_step(s).beta(0) == doctest::Approx(0.35536 / 0.864).epsilon(1e-9));
  CHECK(solve_step(s).beta(0) == doctest::Approx(0.41130).epsilon(1e-5));
}

TEST_CASE("residuals beyond the window give V = 0 and U = tau * sum x") {
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 50, 3, 4);
  Vector beta0 = Vector::Zero(4);
  beta0(0) = -20.0;
  const auto s = compute_local_stats(b, beta0, Bandwidth(0.5), QuantileLevel(0.3));
  CHECK(s.v.norm() == 0.0);
  CHECK(rel_diff(s.u, Vector(0.3 * b.design.colwise().sum().transpose())) <= 1e-12);
}

TEST_CASE("empty batch and merge identity") {
  const Batch empty(Vector(0), Matrix(0, 3));
  const auto z = compute_local_stats(empty, Vector::Zero(3), Bandwidth(1.0), QuantileLevel(0.5));
  CHECK(z.count == 0);
  CHECK(z.u.norm() == 0.0);
  CHECK(z.v.norm() == 0.0);

  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 30, 2, 8);
  const auto s = compute_local_stats(b, Vector::Ones(3), Bandwidth(0.8), QuantileLevel(0.5));
  const auto m = merge(s, LocalStats::zero(3));
  CHECK(m.u == s.u);
  CHECK(m.v == s.v);
  CHECK(m.count == s.count);
  CHECK_THROWS_AS(merge(s, LocalStats::zero(4)), Error);
}

TEST_CASE("statistics match the reference transcription") {
  const Batch b = gen_dataset(NoiseModel::Exponential, 400, 5, 12);
  for (const double h : {0.05, 0.3, 2.0}) {
    Vector u;
    Matrix v;
    reference_stats(b, Vector::Ones(6), h, 0.7, u, v);
    const auto s = compute_local_stats(b, Vector::Ones(6), Bandwidth(h), QuantileLevel(0.7));
    CHECK(rel_diff(s.u, u) <= 1e-12);
    CHECK(rel_diff(s.v, v) <= 1e-12);
    CHECK(s.count == 400);
  }
}

TEST_CASE("per-observation accumulation equals the batch statistics") {
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 10, 3, 5);
  const Vector beta0 = Vector::Ones(4);
  const Bandwidth h(1.5);
  const QuantileLevel tau(0.4);
  LocalStats acc = LocalStats::zero(4);
  LocalStats merged = LocalStats::zero(4);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const Vector x = b.design.row(static_cast<Eigen::Index>(i)).transpose();
    accumulate_observation(acc, b.y(static_cast<Eigen::Index>(i)), x, beta0, h, tau);
    merged += compute_local_stats(b.slice(i, 1), beta0, h, tau);
  }
  const auto whole = compute_local_stats(b, beta0, h, tau);
  CHECK(rel_diff(acc.u, whole.u) <= 1e-12);
  CHECK(rel_diff(acc.v, whole.v) <= 1e-12);
  CHECK(rel_diff(merged.u, whole.u) <= 1e-12);
  CHECK(rel_diff(merged.v, whole.v) <= 1e-12);
  CHECK(acc.count == 10);
}

TEST_CASE("V is symmetric positive semidefinite") {
  const Batch b = gen_dataset(NoiseModel::HeteroscedasticNormal, 300, 6, 31);
  const auto s = compute_local_stats(b, Vector::Ones(7), Bandwidth(0.2), QuantileLevel(0.5));
  CHECK((s.v - s.v.transpose()).norm() <= 1e-12 * s.v.norm());
  const Eigen::SelfAdjointEigenSolver<Matrix> es(s.v);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10 * s.v.trace());
}

TEST_CASE("solve_step on an identity system returns U") {
  LocalStats s = LocalStats::zero(5);
  s.v = Matrix::Identity(5, 5);
  s.u << 1, -2, 3, 0.5, 7;
  s.count = 5;
  CHECK(rel_diff(solve_step(s).beta, s.u) <= 1e-14);
  LocalStats zero = LocalStats::zero(3);
  zero.u = Vector::Ones(3);
  CHECK_THROWS_AS(solve_step(zero), Error);
  try {
    solve_step(zero);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingularSystem);
  }
}

TEST_CASE("one step from the truth stays near the truth") {
  const int p = 3;
  const std::int64_t n = 100000;
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, n, p, 77);
  const QuantileLevel tau(0.5);
  const Vector truth = true_beta_tau(NoiseModel::HomoscedasticNormal, tau, p);
  const auto s = compute_local_stats(b, truth, Bandwidth(0.1), tau);
  CHECK((solve_step(s).beta - truth).norm() <= 15.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("one-step contraction from a perturbed start") {
  const int p = 3;
  const QuantileLevel tau(0.5);
  const Vector truth = true_beta_tau(NoiseModel::HomoscedasticNormal, tau, p);
  int improved = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 100000, p, 1000 + rep);
    Rng rng(rep, 9);
    std::normal_distribution<double> z;
    Vector delta(p + 1);
    for (int k = 0; k <= p; ++k) delta(k) = z(rng);
    delta *= 0.1 / delta.norm();
    const auto s = compute_local_stats(b, truth + delta, Bandwidth(0.1), tau);
    if ((solve_step(s).beta - truth).norm() < 0.1) ++improved;
  }
  CHECK(improved >= 190);
}

TEST_CASE("bandwidth schedule") {
  CHECK(bandwidth_schedule(1, 15, 100, 1000000).value() == doctest::Approx(std::sqrt(0.15)).epsilon(1e-12));
  CHECK(bandwidth_schedule(1, 15, 100, 1000000).value() == doctest::Approx(0.387298).epsilon(1e-6));
  CHECK(bandwidth_schedule(2, 15, 100, 1000000).value() == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(bandwidth_schedule(3, 15, 100, 1000000).value() == doctest::Approx(0.0225).epsilon(1e-12));
  CHECK(bandwidth_schedule(4, 15, 100, 1000000).value() == doctest::Approx(std::sqrt(15e-6)).epsilon(1e-12));
  CHECK(bandwidth_schedule(4, 15, 100, 1000000).value() == doctest::Approx(0.00387298).epsilon(1e-6));
  CHECK(bandwidth_schedule(2, 15, 100, 1000000, 2.0).value() == doctest::Approx(0.3).epsilon(1e-12));
  CHECK_THROWS_AS(bandwidth_schedule(1, 100, 100, 1000), Error);
  CHECK_THROWS_AS(bandwidth_schedule(0, 15, 100, 1000), Error);
}

TEST_CASE("required rounds") {
  CHECK(required_rounds(15, 100, 1000000) == 4);
  CHECK(required_rounds(3, 100, 1000000) == 3);
  CHECK(required_rounds(15, 100, 100) == 1);
  CHECK(required_rounds(15, 100, 10000) == 3);
  for (std::int64_t m = 50; m <= 1000; m += 50) {
    for (std::int64_t n = m; n <= 10000000; n *= 3) {
      CHECK(required_rounds(15, m, n) <= required_rounds(15, m, n * 3));
      if (m + 50 <= n) CHECK(required_rounds(15, m + 50, n) <= required_rounds(15, m, n));
    }
  }
  try {
    required_rounds(200, 100, 1000);
    FAIL("p >= m accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidDimensions);
  }
}

TEST_CASE("single partition equals pooled iteration") {
  const int p = 4;
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 2000, p, 3);
  DcConfig cfg;
  cfg.tau = QuantileLevel(0.3);
  cfg.q = 3;
  cfg.m = 100;
  const Batch parts[] = {b};
  const auto dc = dc_leqr(parts, cfg);

  Vector beta = dc.diagnostics.beta0;
  for (int g = 1; g <= 3; ++g) {
    const double h = std::max(std::sqrt(p / 2000.0), std::pow(p / 100.0, std::pow(2.0, g - 2)));
    CHECK(dc.diagnostics.rounds[static_cast<std::size_t>(g - 1)].bandwidth == doctest::Approx(h).epsilon(1e-12));
    Vector u;
    Matrix v;
    reference_stats(b, beta, h, 0.3, u, v);
    beta = v.ldlt().solve(u);
  }
  CHECK(rel_diff(dc.beta, beta) <= 1e-8);
}

TEST_CASE("partition invariance") {
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 5000, 5, 19);
  DcConfig cfg;
  cfg.tau = QuantileLevel(0.5);
  cfg.q = 3;
  cfg.m = 100;
  cfg.beta0 = solve_qr(b.slice(0, 100), cfg.tau);
  const std::vector<Batch> one{b};
  const auto ref = dc_leqr(one, cfg);
  for (const std::size_t parts : {10u, 50u}) {
    const auto split = split_sequential(b, 5000 / parts);
    const auto fit = dc_leqr(split, cfg);
    CHECK(rel_diff(fit.beta, ref.beta) <= 1e-10);
    // Round 1 aggregates at the same beta0, so only reassociation separates them.
    CHECK(rel_diff(fit.diagnostics.rounds[0].agg.u, ref.diagnostics.rounds[0].agg.u) <= 1e-12);
    CHECK(rel_diff(fit.diagnostics.rounds[0].agg.v, ref.diagnostics.rounds[0].agg.v) <= 1e-12);
  }
}

TEST_CASE("dc_leqr diagnostics and configuration errors") {
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 2000, 3, 6);
  const auto parts = split_sequential(b, 100);
  DcConfig cfg;
  cfg.tau = QuantileLevel(0.5);
  cfg.q = 3;
  const auto fit = dc_leqr(parts, cfg);
  REQUIRE(fit.diagnostics.rounds.size() == 3);
  CHECK(fit.diagnostics.n == 2000);
  CHECK(fit.diagnostics.m == 100);
  CHECK(fit.diagnostics.beta0 == solve_qr(parts[0], cfg.tau));
  for (const auto& r : fit.diagnostics.rounds) {
    CHECK(r.score_norm >= 0.0);
    CHECK(r.agg.count == 2000);
  }

  DcConfig second = cfg;
  second.initial_partition = 4;
  CHECK(dc_leqr(parts, second).diagnostics.beta0 == solve_qr(parts[4], cfg.tau));

  DcConfig explicit_h = cfg;
  explicit_h.bandwidths = std::vector<double>{0.5, 0.2, 0.1};
  const auto fixed = dc_leqr(parts, explicit_h);
  CHECK(fixed.diagnostics.rounds[1].bandwidth == 0.2);

  DcConfig scaled = cfg;
  scaled.c = {1.0, 2.0, 0.5};
  const auto sc = dc_leqr(parts, scaled);
  CHECK(sc.diagnostics.rounds[1].bandwidth ==
        doctest::Approx(2.0 * bandwidth_schedule(2, 3, 100, 2000).value()).epsilon(1e-14));

  DcConfig bad = cfg;
  bad.q = 0;
  CHECK_THROWS_AS(dc_leqr(parts, bad), Error);
  bad = cfg;
  bad.c = {1.0, 2.0};
  CHECK_THROWS_AS(dc_leqr(parts, bad), Error);
  bad = cfg;
  bad.bandwidths = std::vector<double>{0.1};
  CHECK_THROWS_AS(dc_leqr(parts, bad), Error);
  CHECK_THROWS_AS(dc_leqr(std::span<const Batch>{}, cfg), Error);
}

TEST_CASE("round errors carry the round index") {
  // Constant response in one batch and huge bandwidth shrinkage: later rounds
  // see an empty smoothing window.
  const Batch b = gen_dataset(NoiseModel::HomoscedasticNormal, 400, 2, 2);
  const auto parts = split_sequential(b, 100);
  DcConfig cfg;
  cfg.q = 2;
  cfg.bandwidths = std::vector<double>{0.5, 1e-12};
  try {
    dc_leqr(parts, cfg);
    FAIL("empty window solved");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingularSystem);
    CHECK(e.detail().find("round 2") != std::string::npos);
  }
}

// simgen.hpp
//
// Synthetic data for the simulation study: correlated uniform covariates,
// three noise families and their true quantile coefficients, plus the
// Monte-Carlo harness that turns repeated fits into coverage, bias and
// variance summaries.

#ifndef MEMQUANT_SIMGEN_HPP
#define MEMQUANT_SIMGEN_HPP

#include "memquant/batch_qr.hpp"
#include "memquant/core.hpp"
#include "memquant/inference.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace memquant {

/// Counter-based 64-bit generator. Output k of stream (seed, stream) is a
/// SplitMix64 finalisation of a keyed counter, so streams are independent
/// and any rep can be replayed on its own.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  result_type operator()() noexcept;
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

enum class NoiseModel { HomoscedasticNormal, HeteroscedasticNormal, Exponential };

const char* to_string(NoiseModel model);
/// Accepts homoscedastic, heteroscedastic, exponential (and the *_normal forms).
NoiseModel parse_noise_model(const std::string& name);

/// Latent AR(1) correlation of the Gaussian copula, 2 sin(pi/12), which gives
/// uniform neighbours a Pearson correlation of exactly 1/2.
double copula_latent_correlation();

/// n x p matrix with Unif(0,1) marginals and lag-1 correlation 1/2.
Matrix gen_covariates(std::int64_t n, int p, std::uint64_t seed);
/// Same law drawn from a caller-owned generator.
Matrix gen_covariates(std::int64_t n, int p, Rng& rng);

/// Raw noise for a covariate row (without intercept).
double gen_noise(NoiseModel model, const Vector& x_row, Rng& rng);

/// beta(tau) for y = 1 + sum_j x_j + eps.
Coefficients true_beta_tau(NoiseModel model, QuantileLevel tau, int p);

/// E[X X'] of the intercept-augmented covariates, from the copula in closed form.
Matrix covariate_second_moment(int p);

/// v' D^{-1} E[XX'] D^{-1} v for models whose conditional density at the
/// quantile does not depend on X; empty for the heteroscedastic model.
std::optional<double> true_sandwich_variance(NoiseModel model, QuantileLevel tau, int p, const Vector& v);

/// n rows of y = 1 + sum_j x_j + eps. Covariates use stream 0 of `seed`,
/// noise uses stream 1.
Batch gen_dataset(NoiseModel model, std::int64_t n, int p, std::uint64_t seed);

enum class Method { DcLeqr, NaiveDc, QrAll, Online };

const char* to_string(Method method);
/// Accepts dc_leqr, naive_dc, qr_all, online.
Method parse_method(const std::string& name);

struct ExperimentSpec {
  std::int64_t p = 15;
  std::int64_t m = 100;
  std::int64_t n = 10000;
  double tau = 0.5;
  NoiseModel model = NoiseModel::HomoscedasticNormal;
  std::vector<Method> methods{Method::DcLeqr};
  /// Rounds to report; empty means the required round count.
  std::vector<int> q_values{4};
  int reps = 500;
  std::uint64_t base_seed = 1;
  double alpha = 0.05;
  std::vector<double> c{1.0};
  std::optional<std::vector<double>> adaptive_grid;
  /// 0 defers to MEMQUANT_THREADS, then to the hardware.
  int threads = 0;
  QrOptions qr;

  void validate() const;
  std::vector<int> resolved_q_values() const;
};

struct TrialResult {
  Method method = Method::DcLeqr;
  int q = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  Coefficients estimate;
  Interval ci;
  /// v0' beta(tau).
  double truth = 0.0;
  /// v0' estimate.
  double value = 0.0;
  bool covered = false;
  /// Estimated v0' D^-1 S D^-1 v0 behind the interval.
  double sandwich = 0.0;
  double seconds = 0.0;
};

struct SummaryRow {
  Method method = Method::DcLeqr;
  int q = 0;
  double tau = 0.5;
  std::int64_t p = 0;
  std::int64_t m = 0;
  std::int64_t n = 0;
  double log_m_n = 0.0;
  int reps = 0;
  int failures = 0;
  double coverage = 0.0;
  double bias = 0.0;
  /// Across-rep variance of v0' estimate; absent with fewer than two successes.
  std::optional<double> variance;
  double mean_half_width = 0.0;
  /// Mean sqrt(estimated / true sandwich) when the truth is available.
  std::optional<double> variance_ratio;
  double seconds = 0.0;
};

struct ExperimentResult {
  std::vector<SummaryRow> summary;
  /// Rep-major, then method, then q, in the order of the spec.
  std::vector<TrialResult> trials;
};

/// Every rep draws fresh data with seed base_seed + rep and fits each
/// requested method on it. Naive-DC and pooled intervals use the
/// D estimate of the DC LEQR fit at the same q. Failures are counted, not
/// thrown. The fold over reps is in rep order, so the summary does not depend
/// on the thread count (apart from the timing column).
ExperimentResult run_coverage_experiment(const ExperimentSpec& spec);

/// Rep count and cell layout for --dry-run.
std::int64_t planned_fits(const ExperimentSpec& spec);

/// Flat `key = value` text, `#` comments. Keys: p, m, n, tau, model, method,
/// q, reps, seed, alpha, c, adaptive_grid, threads. tau, n, model, method, q
/// and c take comma lists; adaptive_grid takes a comma list or lo:hi:count.
/// One spec is produced per (model, n, tau) combination. Errors carry the
/// line number.
std::vector<ExperimentSpec> parse_experiment_config(std::istream& in);

/// Threads to use for `requested` (0 = automatic), capped by MEMQUANT_THREADS.
int resolve_threads(int requested);

}  // namespace memquant

#endif  // MEMQUANT_SIMGEN_HPP

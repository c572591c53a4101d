// online.hpp
//
// One-pass streaming LEQR. After an initial batch of m samples, the stream is
// cut into intervals (s_l, r_l]; each sample is folded into the running
// statistics of the current interval using the estimate frozen at the end of
// the previous interval, and the estimate at time j solves
//   (V(r_{l-1}) + V(j)) beta = U(r_{l-1}) + U(j).
// Memory is O(p^2) regardless of stream length.

#ifndef MEMQUANT_ONLINE_HPP
#define MEMQUANT_ONLINE_HPP

#include "memquant/batch_qr.hpp"
#include "memquant/core.hpp"
#include "memquant/inference.hpp"
#include "memquant/leqr.hpp"

#include <cstdint>
#include <utility>

namespace memquant {

/// Exponent a_l of the interval schedule: a_{2k-1} = 2^{k-1} + 1/2,
/// a_{2k} = 2^{k-1} + 3/4.
double interval_exponent(int l);

/// (s_l, r_l) = (floor(m^{a_{l-1}}) + 1, floor(m^{a_l})) with s_1 = 1, computed
/// in exact integer arithmetic. Throws Overflow when r_l exceeds int64.
std::pair<std::int64_t, std::int64_t> interval_bounds(int l, std::int64_t m);

/// h_1 = sqrt(p/m), h_l = sqrt(p / m^{a_{l-1}}) for l >= 2. Requires 1 <= p < m.
Bandwidth online_bandwidth(int l, std::int64_t m, std::int64_t p);

struct OnlineOptions {
  /// Solve every `stride` samples; interval ends are always solved.
  std::int64_t stride = 1;
  QrOptions qr;
};

class OnlineState {
 public:
  /// Fits the initial quantile regression on `first_batch` and builds the
  /// carried statistics at h = sqrt(p/m).
  OnlineState(const Batch& first_batch, QuantileLevel tau, const OnlineOptions& opts = {});

  /// Folds one observation in and returns the current estimate. The
  /// observation is consumed; nothing about it is retained beyond the sums.
  const Coefficients& ingest(Observation obs);
  const Coefficients& ingest(double y, const Vector& x);
  /// Solves now from the current sums. Only needed when a stride above 1
  /// left the latest samples without a solve.
  const Coefficients& refresh();

  const Coefficients& estimate() const noexcept { return beta_current_; }
  const Coefficients& initial_estimate() const noexcept { return beta_initial_; }
  const Coefficients& interval_start_estimate() const noexcept { return beta_prev_interval_; }
  const LocalStats& carried() const noexcept { return carried_; }
  const LocalStats& live() const noexcept { return live_; }

  int interval() const noexcept { return l_; }
  std::int64_t samples_seen() const noexcept { return j_; }
  std::int64_t init_size() const noexcept { return m_; }
  std::int64_t interval_end() const noexcept { return r_l_; }
  double bandwidth() const noexcept { return h_; }
  int dim() const noexcept { return dim_; }

  /// True right after the sample that closed an interval was ingested.
  bool at_checkpoint() const noexcept { return checkpoint_; }
  /// Too few samples in the first interval for the estimate to be trusted.
  bool warmup() const noexcept { return l_ == 1 && j_ < dim_; }
  /// Solves skipped because V was not invertible; the previous estimate stands.
  std::int64_t failed_solves() const noexcept { return failed_solves_; }
  bool last_solve_failed() const noexcept { return last_failed_; }

  /// D from (V(r_{l-1}) + V(j)) over the samples it covers, E[XX'] from every
  /// sample seen including the initial batch, n = m + j.
  VarianceEstimate variance_estimate() const;
  Interval confidence_interval(const Vector& v, double alpha = 0.05) const;

  /// Scalars held by the state between ingests.
  std::int64_t stored_scalars() const noexcept;

 private:
  void solve();
  void roll_interval();

  std::int64_t m_;
  std::int64_t p_bw_;
  int dim_;
  QuantileLevel tau_;
  std::int64_t stride_;
  int l_ = 1;
  std::int64_t j_ = 0;
  std::int64_t r_l_ = 0;
  double h_ = 0.0;
  LocalStats carried_;
  LocalStats live_;
  Matrix xx_;
  Coefficients beta_initial_;
  Coefficients beta_prev_interval_;
  Coefficients beta_current_;
  bool checkpoint_ = false;
  bool last_failed_ = false;
  std::int64_t failed_solves_ = 0;
  Vector x_scratch_;
};

OnlineState online_init(const Batch& first_batch, QuantileLevel tau, const OnlineOptions& opts = {});

const Coefficients& online_ingest(OnlineState& state, Observation obs);

}  // namespace memquant

#endif  // MEMQUANT_ONLINE_HPP

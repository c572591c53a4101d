#include "memquant/online.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <limits>

namespace memquant {

namespace {

using boost::multiprecision::cpp_int;

// 4 * a_l, which is always an integer.
std::int64_t quadruple_exponent(int l) {
  const int k = (l + 1) / 2;
  const std::int64_t pow2 = std::int64_t{1} << (k + 1);
  return pow2 + (l % 2 == 1 ? 2 : 3);
}

std::int64_t interval_end(int l, std::int64_t m) {
  if (l == 0) return 0;
  if (interval_exponent(l) * std::log10(static_cast<double>(m)) > 18.9) {
    throw Error(ErrorKind::Overflow, "interval " + std::to_string(l) + " ends beyond the 64-bit range for m = " +
                                         std::to_string(m));
  }
  const cpp_int power = boost::multiprecision::pow(cpp_int(m), static_cast<unsigned>(quadruple_exponent(l)));
  const cpp_int root = boost::multiprecision::sqrt(boost::multiprecision::sqrt(power));
  if (root > cpp_int(std::numeric_limits<std::int64_t>::max())) {
    throw Error(ErrorKind::Overflow, "interval end exceeds the 64-bit range");
  }
  return root.convert_to<std::int64_t>();
}

}  // namespace

double interval_exponent(int l) {
  if (l < 1) throw Error(ErrorKind::InvalidArgument, "interval index starts at 1");
  if (l > 120) throw Error(ErrorKind::Overflow, "interval index too large");
  return static_cast<double>(quadruple_exponent(l)) / 4.0;
}

std::pair<std::int64_t, std::int64_t> interval_bounds(int l, std::int64_t m) {
  if (l < 1) throw Error(ErrorKind::InvalidArgument, "interval index starts at 1");
  if (m < 2) throw Error(ErrorKind::InvalidArgument, "initial batch size must be at least 2");
  return {interval_end(l - 1, m) + 1, interval_end(l, m)};
}

Bandwidth online_bandwidth(int l, std::int64_t m, std::int64_t p) {
  if (l < 1) throw Error(ErrorKind::InvalidArgument, "interval index starts at 1");
  if (p < 1 || p >= m) {
    throw Error(ErrorKind::InvalidDimensions, "online bandwidth needs 1 <= p < m, got p=" + std::to_string(p) +
                                                  " m=" + std::to_string(m));
  }
  const double md = static_cast<double>(m);
  const double scale = l == 1 ? md : std::pow(md, interval_exponent(l - 1));
  return Bandwidth(std::sqrt(static_cast<double>(p) / scale));
}

OnlineState::OnlineState(const Batch& first_batch, QuantileLevel tau, const OnlineOptions& opts)
    : m_(static_cast<std::int64_t>(first_batch.size())),
      p_bw_(bandwidth_dimension(first_batch.covariates())),
      dim_(first_batch.dim()),
      tau_(tau),
      stride_(opts.stride) {
  if (stride_ < 1) throw Error(ErrorKind::InvalidArgument, "solve stride must be at least 1");
  beta_initial_ = solve_qr(first_batch, tau, opts.qr);
  h_ = online_bandwidth(1, m_, p_bw_).value();
  carried_ = compute_local_stats(first_batch, beta_initial_, Bandwidth(h_), tau);
  live_ = LocalStats::zero(dim_);
  xx_ = gram_sum(std::span<const Batch>(&first_batch, 1));
  beta_prev_interval_ = beta_initial_;
  beta_current_ = beta_initial_;
  r_l_ = interval_bounds(1, m_).second;
  x_scratch_ = Vector::Zero(dim_);
  x_scratch_(0) = 1.0;
}

const Coefficients& OnlineState::ingest(Observation obs) { return ingest(obs.y, obs.x); }

const Coefficients& OnlineState::ingest(double y, const Vector& x) {
  if (x.size() + 1 != dim_) throw Error(ErrorKind::DimensionMismatch, "observation has the wrong covariate count");
  if (!std::isfinite(y) || !x.allFinite()) throw Error(ErrorKind::InvalidArgument, "observation must be finite");
  x_scratch_.tail(dim_ - 1) = x;
  ++j_;
  accumulate_observation(live_, y, x_scratch_, beta_prev_interval_, Bandwidth(h_), tau_);
  xx_.noalias() += x_scratch_ * x_scratch_.transpose();

  checkpoint_ = j_ == r_l_;
  if (checkpoint_ || j_ % stride_ == 0) solve();
  if (checkpoint_) roll_interval();
  return beta_current_;
}

const Coefficients& OnlineState::refresh() {
  solve();
  return beta_current_;
}

void OnlineState::solve() {
  try {
    beta_current_ = solve_step(merge(carried_, live_), beta_current_).beta;
    last_failed_ = false;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingularSystem) throw;
    last_failed_ = true;
    ++failed_solves_;
  }
}

void OnlineState::roll_interval() {
  carried_ = live_;
  beta_prev_interval_ = beta_current_;
  live_ = LocalStats::zero(dim_);
  ++l_;
  h_ = online_bandwidth(l_, m_, p_bw_).value();
  try {
    r_l_ = interval_bounds(l_, m_).second;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Overflow) throw;
    r_l_ = std::numeric_limits<std::int64_t>::max();
  }
}

VarianceEstimate OnlineState::variance_estimate() const {
  const LocalStats combined = merge(carried_, live_);
  const double n = static_cast<double>(m_ + j_);
  return VarianceEstimate{combined.v / static_cast<double>(combined.count), xx_ / n, m_ + j_};
}

Interval OnlineState::confidence_interval(const Vector& v, double alpha) const {
  return memquant::confidence_interval(beta_current_, v, variance_estimate(), tau_, alpha);
}

std::int64_t OnlineState::stored_scalars() const noexcept {
  const auto stats = [](const LocalStats& s) { return s.u.size() + s.v.size() + 1; };
  const std::int64_t vectors = beta_initial_.size() + beta_prev_interval_.size() + beta_current_.size();
  // m, p, dim, tau, stride, l, j, r_l, h, flags and the failure counter.
  constexpr std::int64_t fixed = 12;
  return stats(carried_) + stats(live_) + xx_.size() + vectors + fixed;
}

OnlineState online_init(const Batch& first_batch, QuantileLevel tau, const OnlineOptions& opts) {
  return OnlineState(first_batch, tau, opts);
}

const Coefficients& online_ingest(OnlineState& state, Observation obs) { return state.ingest(std::move(obs)); }

}  // namespace memquant

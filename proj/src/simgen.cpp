#include "memquant/simgen.hpp"

#include "memquant/baselines.hpp"
#include "memquant/leqr.hpp"
#include "memquant/online.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace memquant {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double normal_quantile(double p) {
  const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

double normal_density(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Density of the noise at its tau-quantile when it does not depend on X.
std::optional<double> density_at_quantile(NoiseModel model, double tau) {
  switch (model) {
    case NoiseModel::HomoscedasticNormal: return normal_density(normal_quantile(tau));
    case NoiseModel::Exponential: return 1.0 - tau;
    case NoiseModel::HeteroscedasticNormal: return std::nullopt;
  }
  return std::nullopt;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

TrialResult make_trial(Method method, int q, std::uint64_t seed, double truth) {
  TrialResult t;
  t.method = method;
  t.q = q;
  t.seed = seed;
  t.truth = truth;
  return t;
}

void fill_interval(TrialResult& t, const Coefficients& beta, const Vector& v0, const VarianceEstimate& ve,
                   QuantileLevel tau, double alpha) {
  t.estimate = beta;
  t.value = v0.dot(beta);
  t.sandwich = sandwich_variance(ve.d_hat, ve.sigma_hat, v0);
  t.ci = confidence_interval(beta, v0, ve, tau, alpha);
  t.covered = t.ci.contains(t.truth);
}

void mark_failed(TrialResult& t, const std::string& message) {
  t.failed = true;
  t.error = message;
}

std::vector<TrialResult> run_trial(const ExperimentSpec& spec, const std::vector<int>& qs, std::uint64_t seed,
                                   const Vector& v0, double truth) {
  const QuantileLevel tau(spec.tau);
  const int p = static_cast<int>(spec.p);
  std::vector<TrialResult> out;

  const Batch data = gen_dataset(spec.model, spec.n, p, seed);
  const auto parts = split_sequential(data, static_cast<std::size_t>(spec.m));

  const bool needs_dc = std::any_of(spec.methods.begin(), spec.methods.end(), [](Method m) {
    return m != Method::Online;
  });
  std::optional<DcResult> dc;
  std::string dc_error;
  std::vector<std::optional<VarianceEstimate>> ve(qs.size());
  double dc_seconds = 0.0;
  if (needs_dc) {
    const auto start = Clock::now();
    try {
      DcConfig cfg;
      cfg.tau = tau;
      cfg.q = *std::max_element(qs.begin(), qs.end());
      cfg.c = spec.c;
      cfg.adaptive_grid = spec.adaptive_grid;
      cfg.qr = spec.qr;
      dc = dc_leqr(parts, cfg);
      const Matrix gram = gram_sum(parts);
      for (std::size_t k = 0; k < qs.size(); ++k) {
        const auto& record = dc->diagnostics.rounds[static_cast<std::size_t>(qs[k] - 1)];
        ve[k] = build_variance_estimate(record.agg, gram, spec.n);
      }
    } catch (const Error& e) {
      dc.reset();
      dc_error = e.what();
    }
    dc_seconds = seconds_since(start);
  }

  for (const Method method : spec.methods) {
    std::optional<Coefficients> beta;
    std::string error;
    double seconds = 0.0;
    std::optional<OnlineState> online;
    const auto start = Clock::now();
    try {
      switch (method) {
        case Method::DcLeqr: break;
        case Method::NaiveDc: beta = naive_dc(parts, tau, spec.qr); break;
        case Method::QrAll: beta = qr_all(data, tau, spec.qr); break;
        case Method::Online: {
          OnlineOptions opts;
          opts.qr = spec.qr;
          opts.stride = std::max<std::int64_t>(spec.n - spec.m, 1);
          online.emplace(parts.front(), tau, opts);
          Vector x(p);
          for (Eigen::Index i = spec.m; i < data.design.rows(); ++i) {
            x = data.design.row(i).tail(p).transpose();
            online->ingest(data.y(i), x);
          }
          if (online->last_solve_failed()) throw Error(ErrorKind::SingularSystem, "final online solve failed");
          break;
        }
      }
    } catch (const Error& e) {
      error = e.what();
    }
    seconds = seconds_since(start) + (method == Method::Online ? 0.0 : dc_seconds);

    for (std::size_t k = 0; k < qs.size(); ++k) {
      TrialResult t = make_trial(method, qs[k], seed, truth);
      t.seconds = seconds;
      try {
        if (!error.empty()) {
          mark_failed(t, error);
        } else if (method == Method::Online) {
          fill_interval(t, online->estimate(), v0, online->variance_estimate(), tau, spec.alpha);
        } else if (!dc) {
          mark_failed(t, dc_error);
        } else {
          const Coefficients& b =
              method == Method::DcLeqr ? dc->diagnostics.rounds[static_cast<std::size_t>(qs[k] - 1)].beta : *beta;
          fill_interval(t, b, v0, *ve[k], tau, spec.alpha);
        }
      } catch (const Error& e) {
        mark_failed(t, e.what());
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

// Trims and splits on commas; empty items are rejected by the caller.
std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    items.push_back(first == std::string::npos ? std::string() : item.substr(first, last - first + 1));
  }
  return items;
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) noexcept : key_(mix64(seed + kGolden) ^ mix64(~stream)) {}

Rng::result_type Rng::operator()() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

const char* to_string(NoiseModel model) {
  switch (model) {
    case NoiseModel::HomoscedasticNormal: return "homoscedastic";
    case NoiseModel::HeteroscedasticNormal: return "heteroscedastic";
    case NoiseModel::Exponential: return "exponential";
  }
  return "unknown";
}

NoiseModel parse_noise_model(const std::string& name) {
  if (name == "homoscedastic" || name == "homoscedastic_normal") return NoiseModel::HomoscedasticNormal;
  if (name == "heteroscedastic" || name == "heteroscedastic_normal") return NoiseModel::HeteroscedasticNormal;
  if (name == "exponential") return NoiseModel::Exponential;
  throw Error(ErrorKind::InvalidArgument, "unknown noise model '" + name + "'");
}

double copula_latent_correlation() { return 2.0 * std::sin(std::numbers::pi / 12.0); }

Matrix gen_covariates(std::int64_t n, int p, std::uint64_t seed) {
  Rng rng(seed, 0);
  return gen_covariates(n, p, rng);
}

Matrix gen_covariates(std::int64_t n, int p, Rng& rng) {
  if (n < 1 || p < 0) throw Error(ErrorKind::InvalidArgument, "covariates need n >= 1 and p >= 0");
  const double rho = copula_latent_correlation();
  const double innovation = std::sqrt(1.0 - rho * rho);
  std::normal_distribution<double> normal;
  Matrix x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    double z = 0.0;
    for (int j = 0; j < p; ++j) {
      z = j == 0 ? normal(rng) : rho * z + innovation * normal(rng);
      x(i, j) = normal_cdf(z);
    }
  }
  return x;
}

double gen_noise(NoiseModel model, const Vector& x_row, Rng& rng) {
  switch (model) {
    case NoiseModel::HomoscedasticNormal: return std::normal_distribution<double>()(rng);
    case NoiseModel::HeteroscedasticNormal:
      if (x_row.size() < 1) throw Error(ErrorKind::InvalidArgument, "heteroscedastic noise needs p >= 1");
      return (1.0 + 0.3 * x_row(0)) * std::normal_distribution<double>()(rng);
    case NoiseModel::Exponential: return std::exponential_distribution<double>(1.0)(rng);
  }
  return 0.0;
}

Coefficients true_beta_tau(NoiseModel model, QuantileLevel tau, int p) {
  if (p < 0) throw Error(ErrorKind::InvalidArgument, "p must be nonnegative");
  Coefficients beta = Coefficients::Ones(p + 1);
  const double t = tau.value();
  switch (model) {
    case NoiseModel::HomoscedasticNormal: beta(0) += normal_quantile(t); break;
    case NoiseModel::HeteroscedasticNormal:
      if (p < 1) throw Error(ErrorKind::InvalidArgument, "heteroscedastic model needs p >= 1");
      beta(0) += normal_quantile(t);
      beta(1) += 0.3 * normal_quantile(t);
      break;
    case NoiseModel::Exponential: beta(0) += -std::log1p(-t); break;
  }
  return beta;
}

Matrix covariate_second_moment(int p) {
  if (p < 0) throw Error(ErrorKind::InvalidArgument, "p must be nonnegative");
  const double rho = copula_latent_correlation();
  Matrix s(p + 1, p + 1);
  s(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    s(0, j) = s(j, 0) = 0.5;
    for (int k = j; k <= p; ++k) {
      // Cov of Phi(Z_j), Phi(Z_k) for latent correlation r is asin(r/2) / (2 pi).
      const double r = std::pow(rho, k - j);
      s(j, k) = s(k, j) = 0.25 + std::asin(r / 2.0) / (2.0 * std::numbers::pi);
    }
  }
  return s;
}

std::optional<double> true_sandwich_variance(NoiseModel model, QuantileLevel tau, int p, const Vector& v) {
  const auto f = density_at_quantile(model, tau.value());
  if (!f) return std::nullopt;
  const Matrix s = covariate_second_moment(p);
  if (v.size() != s.rows()) throw Error(ErrorKind::DimensionMismatch, "direction does not match p + 1");
  return v.dot(s.ldlt().solve(v)) / (*f * *f);
}

Batch gen_dataset(NoiseModel model, std::int64_t n, int p, std::uint64_t seed) {
  Rng cov_rng(seed, 0);
  Rng noise_rng(seed, 1);
  Matrix x = gen_covariates(n, p, cov_rng);
  Vector y(n);
  Vector row(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    row = x.row(i).transpose();
    y(i) = 1.0 + row.sum() + gen_noise(model, row, noise_rng);
  }
  return Batch::from_covariates(y, x);
}

const char* to_string(Method method) {
  switch (method) {
    case Method::DcLeqr: return "dc_leqr";
    case Method::NaiveDc: return "naive_dc";
    case Method::QrAll: return "qr_all";
    case Method::Online: return "online";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "dc_leqr" || name == "dc") return Method::DcLeqr;
  if (name == "naive_dc" || name == "naive") return Method::NaiveDc;
  if (name == "qr_all" || name == "all") return Method::QrAll;
  if (name == "online") return Method::Online;
  throw Error(ErrorKind::InvalidArgument, "unknown method '" + name + "'");
}

void ExperimentSpec::validate() const {
  if (p < 0) throw Error(ErrorKind::InvalidArgument, "p must be nonnegative");
  if (m < p + 2) throw Error(ErrorKind::InvalidArgument, "m must be at least p + 2");
  if (n < m) throw Error(ErrorKind::InvalidArgument, "n must be at least m");
  QuantileLevel{tau};
  if (reps < 1) throw Error(ErrorKind::InvalidArgument, "reps must be at least 1");
  if (methods.empty()) throw Error(ErrorKind::InvalidArgument, "no methods requested");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
  for (const int q : q_values) {
    if (q < 1) throw Error(ErrorKind::InvalidArgument, "q must be at least 1");
  }
  if (model == NoiseModel::HeteroscedasticNormal && p < 1) {
    throw Error(ErrorKind::InvalidArgument, "heteroscedastic model needs p >= 1");
  }
}

std::vector<int> ExperimentSpec::resolved_q_values() const {
  if (!q_values.empty()) return q_values;
  return {required_rounds(bandwidth_dimension(static_cast<int>(p)), m, n)};
}

std::int64_t planned_fits(const ExperimentSpec& spec) {
  return static_cast<std::int64_t>(spec.reps) * static_cast<std::int64_t>(spec.methods.size());
}

int resolve_threads(int requested) {
  int threads = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("MEMQUANT_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) threads = std::min(threads, cap);
  }
  return std::max(threads, 1);
}

ExperimentResult run_coverage_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const auto qs = spec.resolved_q_values();
  const int p = static_cast<int>(spec.p);
  const QuantileLevel tau(spec.tau);
  const Vector v0 = unit_diagonal_direction(p + 1);
  const double truth = v0.dot(true_beta_tau(spec.model, tau, p));
  const auto true_sandwich = true_sandwich_variance(spec.model, tau, p, v0);

  std::vector<std::vector<TrialResult>> per_rep(static_cast<std::size_t>(spec.reps));
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int rep = next++; rep < spec.reps; rep = next++) {
      per_rep[static_cast<std::size_t>(rep)] =
          run_trial(spec, qs, spec.base_seed + static_cast<std::uint64_t>(rep), v0, truth);
    }
  };
  const int threads = std::min(resolve_threads(spec.threads), spec.reps);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  ExperimentResult result;
  for (auto& rep : per_rep) {
    for (auto& t : rep) result.trials.push_back(std::move(t));
  }

  const std::size_t cells = spec.methods.size() * qs.size();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    SummaryRow row;
    row.method = spec.methods[cell / qs.size()];
    row.q = qs[cell % qs.size()];
    row.tau = spec.tau;
    row.p = spec.p;
    row.m = spec.m;
    row.n = spec.n;
    row.log_m_n = std::log(static_cast<double>(spec.n)) / std::log(static_cast<double>(spec.m));
    row.reps = spec.reps;
    int ok = 0;
    int covered = 0;
    double sum_err = 0.0;
    double sum_value = 0.0;
    double sum_sq = 0.0;
    double sum_half = 0.0;
    double sum_ratio = 0.0;
    for (int rep = 0; rep < spec.reps; ++rep) {
      const auto& t = result.trials[static_cast<std::size_t>(rep) * cells + cell];
      row.seconds += t.seconds;
      if (t.failed) {
        ++row.failures;
        continue;
      }
      ++ok;
      covered += t.covered ? 1 : 0;
      sum_err += t.value - t.truth;
      sum_value += t.value;
      sum_half += t.ci.half_width();
      if (true_sandwich) sum_ratio += std::sqrt(t.sandwich / *true_sandwich);
    }
    row.seconds /= spec.reps;
    if (ok > 0) {
      row.coverage = static_cast<double>(covered) / ok;
      row.bias = sum_err / ok;
      row.mean_half_width = sum_half / ok;
      if (true_sandwich) row.variance_ratio = sum_ratio / ok;
    }
    if (ok > 1) {
      const double mean = sum_value / ok;
      for (int rep = 0; rep < spec.reps; ++rep) {
        const auto& t = result.trials[static_cast<std::size_t>(rep) * cells + cell];
        if (!t.failed) sum_sq += (t.value - mean) * (t.value - mean);
      }
      row.variance = sum_sq / (ok - 1);
    }
    result.summary.push_back(row);
  }
  return result;
}

std::vector<ExperimentSpec> parse_experiment_config(std::istream& in) {
  ExperimentSpec base;
  std::vector<double> taus{base.tau};
  std::vector<std::int64_t> ns{base.n};
  std::vector<NoiseModel> models{base.model};
  std::map<std::string, int> seen;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    const auto fail = [&](const std::string& msg) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + msg);
    };
    if (eq == std::string::npos) fail("expected key = value");
    auto key_items = split_list(line.substr(0, eq));
    const std::string key = key_items.empty() ? std::string() : key_items.front();
    std::string value = line.substr(eq + 1);
    while (!value.empty() && (value.back() == '\r' || value.back() == ' ' || value.back() == '\t')) value.pop_back();
    const auto items = split_list(value);
    if (items.empty() || std::any_of(items.begin(), items.end(), [](const std::string& s) { return s.empty(); })) {
      fail("empty value for '" + key + "'");
    }
    if (seen.count(key)) fail("duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")");
    seen[key] = line_no;

    const auto to_double = [&](const std::string& s) {
      std::size_t used = 0;
      double d = 0.0;
      try {
        d = std::stod(s, &used);
      } catch (const std::exception&) {
        fail("'" + s + "' is not a number");
      }
      if (used != s.size()) fail("'" + s + "' is not a number");
      return d;
    };
    const auto to_int = [&](const std::string& s) {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(s, &used);
      } catch (const std::exception&) {
        fail("'" + s + "' is not an integer");
      }
      if (used != s.size()) fail("'" + s + "' is not an integer");
      return static_cast<std::int64_t>(v);
    };
    const auto single = [&]() -> const std::string& {
      if (items.size() != 1) fail("'" + key + "' takes a single value");
      return items.front();
    };

    try {
      if (key == "p") {
        base.p = to_int(single());
      } else if (key == "m") {
        base.m = to_int(single());
      } else if (key == "n") {
        ns.clear();
        for (const auto& s : items) ns.push_back(to_int(s));
      } else if (key == "tau") {
        taus.clear();
        for (const auto& s : items) taus.push_back(to_double(s));
      } else if (key == "model") {
        models.clear();
        for (const auto& s : items) models.push_back(parse_noise_model(s));
      } else if (key == "method") {
        base.methods.clear();
        for (const auto& s : items) base.methods.push_back(parse_method(s));
      } else if (key == "q") {
        base.q_values.clear();
        if (!(items.size() == 1 && items.front() == "auto")) {
          for (const auto& s : items) base.q_values.push_back(static_cast<int>(to_int(s)));
        }
      } else if (key == "reps") {
        base.reps = static_cast<int>(to_int(single()));
      } else if (key == "seed") {
        base.base_seed = static_cast<std::uint64_t>(to_int(single()));
      } else if (key == "alpha") {
        base.alpha = to_double(single());
      } else if (key == "c") {
        base.c.clear();
        for (const auto& s : items) base.c.push_back(to_double(s));
      } else if (key == "adaptive_grid") {
        std::vector<double> grid;
        if (items.size() == 1 && items.front().find(':') != std::string::npos) {
          std::stringstream ss(items.front());
          std::string lo, hi, count;
          std::getline(ss, lo, ':');
          std::getline(ss, hi, ':');
          std::getline(ss, count);
          const double a = to_double(lo);
          const double b = to_double(hi);
          const auto k = to_int(count);
          if (k < 1) fail("grid count must be positive");
          for (std::int64_t i = 0; i < k; ++i) {
            grid.push_back(k == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(k - 1));
          }
        } else {
          for (const auto& s : items) grid.push_back(to_double(s));
        }
        base.adaptive_grid = std::move(grid);
      } else if (key == "threads") {
        base.threads = static_cast<int>(to_int(single()));
      } else {
        fail("unknown key '" + key + "'");
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Parse) throw;
      fail(e.detail());
    }
  }

  std::vector<ExperimentSpec> specs;
  for (const auto model : models) {
    for (const auto n : ns) {
      for (const double tau : taus) {
        ExperimentSpec s = base;
        s.model = model;
        s.n = n;
        s.tau = tau;
        try {
          s.validate();
        } catch (const Error& e) {
          throw Error(ErrorKind::Parse, "invalid experiment: " + e.detail());
        }
        specs.push_back(std::move(s));
      }
    }
  }
  return specs;
}

}  // namespace memquant

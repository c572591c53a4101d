// memquant command-line front end.

#include "memquant/baselines.hpp"
#include "memquant/inference.hpp"
#include "memquant/io.hpp"
#include "memquant/leqr.hpp"
#include "memquant/nettree.hpp"
#include "memquant/online.hpp"
#include "memquant/simgen.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>

using namespace memquant;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return 10;
    case ErrorKind::RankDeficient: return 11;
    case ErrorKind::NoConvergence: return 12;
    case ErrorKind::SingularSystem: return 13;
    case ErrorKind::DimensionMismatch: return 14;
    case ErrorKind::InvalidDimensions: return 15;
    case ErrorKind::QuantileOutOfRange: return 16;
    case ErrorKind::TooLarge: return 17;
    case ErrorKind::NotConverged: return 18;
    case ErrorKind::NotSymmetric: return 19;
    case ErrorKind::CountMismatch: return 20;
    case ErrorKind::InvalidArity: return 21;
    case ErrorKind::Overflow: return 22;
    case ErrorKind::Parse: return 23;
  }
  return 1;
}

// Writes to a file, or stdout when the path is empty or "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::string fmt(double v) { return format_double(v); }

struct FitArgs {
  std::string data;
  double tau = 0.5;
  std::int64_t m = 0;
  int q = 0;
  std::vector<double> c{1.0};
  std::string adaptive;
  double alpha = 0.05;
  std::string out;
  std::optional<std::uint64_t> shuffle;
};

Batch load(const FitArgs& a) {
  Batch data = read_dataset_file(a.data);
  if (!a.shuffle) return data;
  std::vector<Eigen::Index> order(data.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(*a.shuffle, 7);
  std::shuffle(order.begin(), order.end(), rng);
  Batch shuffled(Vector(data.y.size()), Matrix(data.design.rows(), data.design.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    shuffled.y(row) = data.y(order[i]);
    shuffled.design.row(row) = data.design.row(order[i]);
  }
  return shuffled;
}

std::vector<double> read_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path);
  std::vector<double> grid;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line == "c")) continue;
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(line, &used));
      if (used != line.size()) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, path + " line " + std::to_string(line_no) + ": not a number");
    }
  }
  if (grid.empty()) throw Error(ErrorKind::Parse, path + " holds no candidates");
  return grid;
}

DcConfig dc_config(const FitArgs& a, const Batch& data) {
  DcConfig cfg;
  cfg.tau = QuantileLevel(a.tau);
  cfg.q = a.q > 0 ? a.q : required_rounds(bandwidth_dimension(data.covariates()), a.m,
                                            static_cast<std::int64_t>(data.size()));
  cfg.c = a.c;
  if (!a.adaptive.empty()) cfg.adaptive_grid = read_grid(a.adaptive);
  return cfg;
}

// Long-format report: field,index,value,lo,hi.
void write_report(std::ostream& out, const std::string& method, const Coefficients& beta, const VarianceEstimate& ve,
                  const FitArgs& a, const FitDiagnostics* diag) {
  const QuantileLevel tau(a.tau);
  out << "field,index,value,lo,hi\n";
  out << "method,," << method << ",,\n";
  out << "tau,," << fmt(a.tau) << ",,\n";
  out << "alpha,," << fmt(a.alpha) << ",,\n";
  out << "n,," << ve.n << ",,\n";
  if (a.m > 0) out << "m,," << a.m << ",,\n";
  const int dim = static_cast<int>(beta.size());
  for (int j = 0; j < dim; ++j) {
    const Vector e = Vector::Unit(dim, j);
    const Interval ci = confidence_interval(beta, e, ve, tau, a.alpha);
    out << "coef," << j << ',' << fmt(beta(j)) << ',' << fmt(ci.lo) << ',' << fmt(ci.hi) << '\n';
  }
  const Vector v0 = unit_diagonal_direction(dim);
  const Interval ci = confidence_interval(beta, v0, ve, tau, a.alpha);
  out << "v0,," << fmt(v0.dot(beta)) << ',' << fmt(ci.lo) << ',' << fmt(ci.hi) << '\n';
  if (diag) {
    out << "q,," << diag->rounds.size() << ",,\n";
    for (const auto& r : diag->rounds) {
      out << "bandwidth," << r.round << ',' << fmt(r.bandwidth) << ",,\n";
      out << "c," << r.round << ',' << fmt(r.c) << ",,\n";
      out << "score_norm," << r.round << ',' << fmt(r.score_norm) << ",,\n";
      out << "cg_iterations," << r.round << ',' << r.cg_iterations << ",,\n";
    }
  }
}

void require_m(const FitArgs& a) {
  if (a.m < 1) throw Error(ErrorKind::InvalidArgument, "--m must be positive");
}

int run_fit(const FitArgs& a, const std::string& method) {
  require_m(a);
  const Batch data = load(a);
  const auto parts = split_sequential(data, static_cast<std::size_t>(a.m));
  const DcConfig cfg = dc_config(a, data);
  // The interval for every method uses D from the DC fit at round q.
  const DcResult dc = dc_leqr(parts, cfg);
  const VarianceEstimate ve = build_variance_estimate(dc.diagnostics.rounds.back().agg, gram_sum(parts),
                                                      static_cast<std::int64_t>(data.size()));
  Coefficients beta = dc.beta;
  if (method == "naive_dc") beta = naive_dc(parts, cfg.tau, cfg.qr);
  if (method == "qr_all") beta = qr_all(data, cfg.tau, cfg.qr);
  Output out(a.out);
  write_report(out.stream(), method, beta, ve, a, &dc.diagnostics);
  return 0;
}

struct OnlineArgs {
  std::string data;
  double tau = 0.5;
  std::int64_t m = 0;
  std::int64_t stride = 1;
  double alpha = 0.05;
  std::string out;
};

int run_online(const OnlineArgs& a) {
  if (a.m < 2) throw Error(ErrorKind::InvalidArgument, "--m must be at least 2");
  std::ifstream in(a.data);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + a.data);
  DatasetReader reader(in);
  std::vector<Observation> init;
  Observation obs;
  while (static_cast<std::int64_t>(init.size()) < a.m && reader.next(obs)) init.push_back(obs);
  if (static_cast<std::int64_t>(init.size()) < a.m) {
    throw Error(ErrorKind::InvalidArgument, "stream ended before the initial batch of " + std::to_string(a.m));
  }
  OnlineOptions opts;
  opts.stride = a.stride;
  OnlineState state(Batch::from_observations(init), QuantileLevel(a.tau), opts);
  init.clear();
  init.shrink_to_fit();

  Output out(a.out);
  auto& os = out.stream();
  const int dim = state.dim();
  const Vector v0 = unit_diagonal_direction(dim);
  os << "j,interval,n,warmup,failed_solves";
  for (int k = 0; k < dim; ++k) os << ",b" << k;
  os << ",v0,half_width\n";
  const auto emit = [&](int interval) {
    const Interval ci = state.confidence_interval(v0, a.alpha);
    os << state.samples_seen() << ',' << interval << ',' << state.init_size() + state.samples_seen() << ','
       << (state.warmup() ? 1 : 0) << ',' << state.failed_solves();
    for (int k = 0; k < dim; ++k) os << ',' << fmt(state.estimate()(k));
    os << ',' << fmt(v0.dot(state.estimate())) << ',' << fmt(ci.half_width()) << '\n';
  };
  bool last_was_checkpoint = false;
  while (reader.next(obs)) {
    const int interval = state.interval();
    state.ingest(obs.y, obs.x);
    last_was_checkpoint = state.at_checkpoint();
    if (last_was_checkpoint) emit(interval);
  }
  if (!last_was_checkpoint) {
    state.refresh();
    emit(state.interval());
  }
  return 0;
}

struct ExperimentArgs {
  std::string config;
  std::string out;
  std::string trials;
  bool dry_run = false;
  int threads = 0;
};

int run_experiment(const ExperimentArgs& a) {
  std::ifstream in(a.config);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + a.config);
  auto specs = parse_experiment_config(in);
  if (a.threads > 0) {
    for (auto& s : specs) s.threads = a.threads;
  }
  if (a.dry_run) {
    std::int64_t reps = 0;
    std::int64_t fits = 0;
    std::size_t rows = 0;
    for (const auto& s : specs) {
      reps += s.reps;
      fits += planned_fits(s);
      rows += s.methods.size() * s.resolved_q_values().size();
    }
    std::cout << "experiments " << specs.size() << "\nreps " << reps << "\nfits " << fits << "\nsummary_rows " << rows
              << '\n';
    return 0;
  }
  Output out(a.out);
  auto& os = out.stream();
  std::optional<Output> trial_out;
  if (!a.trials.empty()) {
    trial_out.emplace(a.trials);
    trial_out->stream() << "model,tau,n,method,q,seed,failed,value,truth,lo,hi,covered,sandwich\n";
  }
  os << "method,q,tau,model,p,m,n,log_m_n,reps,failures,coverage,bias,variance,mean_half_width,variance_ratio,"
        "seconds\n";
  for (const auto& s : specs) {
    const auto result = run_coverage_experiment(s);
    for (const auto& r : result.summary) {
      os << to_string(r.method) << ',' << r.q << ',' << fmt(r.tau) << ',' << to_string(s.model) << ',' << r.p << ','
         << r.m << ',' << r.n << ',' << fmt(r.log_m_n) << ',' << r.reps << ',' << r.failures << ','
         << fmt(r.coverage) << ',' << fmt(r.bias) << ',' << (r.variance ? fmt(*r.variance) : "") << ','
         << fmt(r.mean_half_width) << ',' << (r.variance_ratio ? fmt(*r.variance_ratio) : "") << ','
         << fmt(r.seconds) << '\n';
    }
    if (trial_out) {
      auto& ts = trial_out->stream();
      for (const auto& t : result.trials) {
        ts << to_string(s.model) << ',' << fmt(s.tau) << ',' << s.n << ',' << to_string(t.method) << ',' << t.q
           << ',' << t.seed << ',' << (t.failed ? 1 : 0) << ',' << fmt(t.value) << ',' << fmt(t.truth) << ','
           << fmt(t.ci.lo) << ',' << fmt(t.ci.hi) << ',' << (t.covered ? 1 : 0) << ',' << fmt(t.sandwich) << '\n';
      }
    }
  }
  return 0;
}

struct SimnetArgs {
  std::string data;
  std::string topology = "star";
  std::string topology_file;
  int nodes = 1;
  int arity = 2;
  double tau = 0.5;
  int q = 0;
  std::vector<double> c{1.0};
  double alpha = 0.05;
  std::string out;
  std::string comm;
};

int run_simnet(const SimnetArgs& a) {
  const Batch data = read_dataset_file(a.data);
  TreeTopology topo;
  if (!a.topology_file.empty()) {
    std::ifstream in(a.topology_file);
    if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + a.topology_file);
    topo = read_topology_csv(in);
  } else {
    topo = build_topology(parse_topology_kind(a.topology), a.nodes, a.topology == "binary" ? 2 : a.arity);
  }
  const auto parts = split_even(data, static_cast<std::size_t>(topo.size()));
  DcConfig cfg;
  cfg.tau = QuantileLevel(a.tau);
  cfg.c = a.c;
  const auto m = static_cast<std::int64_t>(parts.front().size());
  cfg.q = a.q > 0 ? a.q
                  : required_rounds(bandwidth_dimension(data.covariates()), m, static_cast<std::int64_t>(data.size()));
  const NetResult net = simulate_dc_leqr(topo, parts, cfg);
  const VarianceEstimate ve = build_variance_estimate(net.diagnostics.rounds.back().agg, gram_sum(parts),
                                                      static_cast<std::int64_t>(data.size()));
  FitArgs report_args;
  report_args.tau = a.tau;
  report_args.alpha = a.alpha;
  report_args.m = m;
  Output out(a.out);
  write_report(out.stream(), "simnet", net.beta, ve, report_args, &net.diagnostics);
  if (!a.comm.empty()) {
    Output comm(a.comm);
    auto& cs = comm.stream();
    cs << "round,messages,uplink_scalars,downlink_scalars,depth\n";
    for (const auto& r : net.comm.rounds) {
      cs << r.round << ',' << r.messages << ',' << r.uplink_scalars << ',' << r.downlink_scalars << ',' << r.depth
         << '\n';
    }
    cs << "total," << net.comm.total_messages() << ',' << net.comm.total_uplink_scalars() << ','
       << net.comm.total_downlink_scalars() << ',' << topo.depth() << '\n';
  }
  return 0;
}

struct GenArgs {
  std::string model = "homoscedastic";
  std::int64_t n = 0;
  int p = 0;
  std::uint64_t seed = 1;
  std::vector<double> taus{0.1, 0.5, 0.9};
  std::string out;
};

int run_gen(const GenArgs& a) {
  const NoiseModel model = parse_noise_model(a.model);
  if (a.n < 1) throw Error(ErrorKind::InvalidArgument, "--n must be positive");
  const Batch data = gen_dataset(model, a.n, a.p, a.seed);
  {
    std::ofstream out(a.out);
    if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + a.out);
    write_dataset(out, data);
  }
  std::filesystem::path truth_path(a.out);
  truth_path.replace_extension(".truth.csv");
  std::ofstream truth(truth_path);
  if (!truth) throw Error(ErrorKind::InvalidArgument, "cannot write " + truth_path.string());
  truth << "tau";
  for (int k = 0; k <= a.p; ++k) truth << ",b" << k;
  truth << '\n';
  for (const double t : a.taus) {
    const Coefficients beta = true_beta_tau(model, QuantileLevel(t), a.p);
    truth << fmt(t);
    for (int k = 0; k <= a.p; ++k) truth << ',' << fmt(beta(k));
    truth << '\n';
  }
  return 0;
}

void add_fit_options(CLI::App* cmd, FitArgs& a) {
  cmd->add_option("--data", a.data, "dataset CSV (y,x1..xp)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--tau", a.tau, "quantile level")->required();
  cmd->add_option("--m", a.m, "batch size (sequential blocks of m rows)")->required();
  cmd->add_option("--q", a.q, "rounds of the DC fit behind the interval (default: required rounds)");
  cmd->add_option("--c", a.c, "bandwidth scaling constant, one value or one per round");
  cmd->add_option("--adaptive", a.adaptive, "file of candidate constants, one per line")->check(CLI::ExistingFile);
  cmd->add_option("--alpha", a.alpha, "1 - confidence level");
  cmd->add_option("--out", a.out, "report CSV (default stdout)");
  cmd->add_option("--shuffle", a.shuffle, "permute rows with this seed before partitioning");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-conquer and online linear estimators for quantile regression"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset and its truth sidecar");
  gen_cmd->add_option("--model", gen.model, "homoscedastic, heteroscedastic or exponential");
  gen_cmd->add_option("--n", gen.n, "rows")->required();
  gen_cmd->add_option("--p", gen.p, "covariates")->required()->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.seed, "random seed");
  gen_cmd->add_option("--tau", gen.taus, "quantile levels for the truth sidecar");
  gen_cmd->add_option("--out", gen.out, "output CSV")->required();

  FitArgs dc, naive, all;
  auto* dc_cmd = app.add_subcommand("fit-dc", "multi-round divide-and-conquer LEQR");
  add_fit_options(dc_cmd, dc);
  auto* naive_cmd = app.add_subcommand("fit-naive", "average of per-batch quantile regressions");
  add_fit_options(naive_cmd, naive);
  auto* all_cmd = app.add_subcommand("fit-all", "quantile regression on the pooled data");
  add_fit_options(all_cmd, all);

  OnlineArgs online;
  auto* online_cmd = app.add_subcommand("fit-online", "replay a stream through the one-pass estimator");
  online_cmd->add_option("--data", online.data, "dataset CSV in stream order")->required()->check(CLI::ExistingFile);
  online_cmd->add_option("--tau", online.tau, "quantile level")->required();
  online_cmd->add_option("--m", online.m, "initial batch size")->required();
  online_cmd->add_option("--stride", online.stride, "solve every k samples (interval ends always solve)");
  online_cmd->add_option("--alpha", online.alpha, "1 - confidence level");
  online_cmd->add_option("--out", online.out, "checkpoint CSV (default stdout)");

  ExperimentArgs exp;
  auto* exp_cmd = app.add_subcommand("experiment", "Monte-Carlo coverage experiment");
  exp_cmd->add_option("--config", exp.config, "key = value config file")->required()->check(CLI::ExistingFile);
  exp_cmd->add_option("--out", exp.out, "summary CSV (default stdout)");
  exp_cmd->add_option("--trials", exp.trials, "per-rep CSV");
  exp_cmd->add_option("--threads", exp.threads, "worker threads (capped by MEMQUANT_THREADS)");
  exp_cmd->add_flag("--dry-run", exp.dry_run, "print the planned work and exit");

  SimnetArgs net;
  auto* net_cmd = app.add_subcommand("simnet", "run DC LEQR over a simulated sensor tree");
  net_cmd->add_option("--data", net.data, "dataset CSV")->required()->check(CLI::ExistingFile);
  net_cmd->add_option("--topology", net.topology, "star, chain, kary or binary");
  net_cmd->add_option("--topology-file", net.topology_file, "CSV node_id,parent_id")->check(CLI::ExistingFile);
  net_cmd->add_option("--nodes", net.nodes, "node count (one batch per node)");
  net_cmd->add_option("--arity", net.arity, "children per node for kary");
  net_cmd->add_option("--tau", net.tau, "quantile level")->required();
  net_cmd->add_option("--q", net.q, "rounds (default: required rounds)");
  net_cmd->add_option("--c", net.c, "bandwidth scaling constant");
  net_cmd->add_option("--alpha", net.alpha, "1 - confidence level");
  net_cmd->add_option("--out", net.out, "report CSV (default stdout)");
  net_cmd->add_option("--comm", net.comm, "communication CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*dc_cmd) return run_fit(dc, "dc_leqr");
    if (*naive_cmd) return run_fit(naive, "naive_dc");
    if (*all_cmd) return run_fit(all, "qr_all");
    if (*online_cmd) return run_online(online);
    if (*exp_cmd) return run_experiment(exp);
    if (*net_cmd) return run_simnet(net);
  } catch (const Error& e) {
    std::cerr << "memquant: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "memquant: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

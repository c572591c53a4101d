#include "doctest.h"

#include "memquant/baselines.hpp"
#include "memquant/io.hpp"
#include "memquant/leqr.hpp"
#include "memquant/nettree.hpp"
#include "memquant/simgen.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace memquant;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("memquant_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(MEMQUANT_CLI_PATH) + " " + args + " >" + path("stdout.txt") + " 2>" +
                          path("stderr.txt");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const std::string& file) {
  std::ifstream in(file);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(fields);
  }
  return rows;
}

// Report rows keyed by field; coef rows are returned in index order.
struct Report {
  Vector coef;
  std::map<std::string, std::vector<std::vector<std::string>>> rows;
  double v0 = 0, v0_lo = 0, v0_hi = 0;
};

Report read_report(const std::string& file) {
  Report r;
  std::vector<double> coef;
  const auto rows = read_csv(file);
  REQUIRE(!rows.empty());
  CHECK(rows[0] == std::vector<std::string>{"field", "index", "value", "lo", "hi"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    REQUIRE(row.size() == 5);
    r.rows[row[0]].push_back(row);
    if (row[0] == "coef") coef.push_back(std::stod(row[2]));
    if (row[0] == "v0") {
      r.v0 = std::stod(row[2]);
      r.v0_lo = std::stod(row[3]);
      r.v0_hi = std::stod(row[4]);
    }
  }
  r.coef = Eigen::Map<Vector>(coef.data(), static_cast<Eigen::Index>(coef.size()));
  return r;
}

const std::string& dataset() {
  static const std::string file = [] {
    const std::string f = path("data.csv");
    REQUIRE(run("gen --model homoscedastic --n 3000 --p 3 --seed 42 --out " + f) == 0);
    return f;
  }();
  return file;
}

}  // namespace

TEST_CASE("gen writes the dataset and its truth sidecar deterministically") {
  REQUIRE(run("gen --model exponential --n 500 --p 4 --seed 7 --out " + path("a.csv")) == 0);
  REQUIRE(run("gen --model exponential --n 500 --p 4 --seed 7 --out " + path("b.csv")) == 0);
  CHECK(slurp(path("a.csv")) == slurp(path("b.csv")));
  CHECK(slurp(path("a.truth.csv")) == slurp(path("b.truth.csv")));
  const auto rows = read_csv(path("a.csv"));
  CHECK(rows.size() == 501);
  CHECK(rows[0] == std::vector<std::string>{"y", "x1", "x2", "x3", "x4"});
  std::ifstream in(path("a.csv"));
  const Batch b = read_dataset(in);
  const Batch expected = gen_dataset(NoiseModel::Exponential, 500, 4, 7);
  CHECK(b.y == expected.y);
  CHECK(b.design == expected.design);

  const auto truth = read_csv(path("a.truth.csv"));
  REQUIRE(truth.size() == 4);
  CHECK(truth[0][0] == "tau");
  CHECK(std::stod(truth[2][1]) == doctest::Approx(1 + std::log(2.0)));

  REQUIRE(run("gen --n 10 --p 0 --tau 0.25 --out " + path("c.csv")) == 0);
  const auto c = read_csv(path("c.csv"));
  CHECK(c.size() == 11);
  CHECK(c[0] == std::vector<std::string>{"y"});
  CHECK(c[1].size() == 1);
  CHECK(read_csv(path("c.truth.csv")).size() == 2);
}

TEST_CASE("fit-dc matches the library and defaults q to the required rounds") {
  const std::string& data = dataset();
  REQUIRE(run("fit-dc --data " + data + " --tau 0.3 --m 100 --out " + path("dc.csv")) == 0);
  const Report r = read_report(path("dc.csv"));
  const Batch b = read_dataset_file(data);
  const auto parts = split_sequential(b, 100);
  DcConfig cfg;
  cfg.tau = QuantileLevel(0.3);
  cfg.q = required_rounds(3, 100, 3000);
  const auto fit = dc_leqr(parts, cfg);
  CHECK(r.coef == fit.beta);
  CHECK(r.rows.at("bandwidth").size() == static_cast<std::size_t>(cfg.q));
  CHECK(r.rows.at("score_norm").size() == static_cast<std::size_t>(cfg.q));
  CHECK(r.rows.at("cg_iterations").size() == static_cast<std::size_t>(cfg.q));
  CHECK(std::stoi(r.rows.at("q")[0][2]) == cfg.q);
  CHECK(r.v0_lo < r.v0);
  CHECK(r.v0 < r.v0_hi);
  CHECK(r.rows.at("coef").size() == 4);
  CHECK(std::stod(r.rows.at("coef")[0][3]) < fit.beta(0));

  REQUIRE(run("fit-dc --data " + data + " --tau 0.3 --m 100 --alpha 0.01 --out " + path("dc99.csv")) == 0);
  const Report wide = read_report(path("dc99.csv"));
  CHECK(wide.v0_hi - wide.v0_lo > r.v0_hi - r.v0_lo);

  REQUIRE(run("fit-dc --data " + data + " --tau 0.3 --m 100 --out " + path("dc2.csv")) == 0);
  CHECK(slurp(path("dc.csv")) == slurp(path("dc2.csv")));
}

TEST_CASE("fit-naive and fit-all share the partition convention") {
  const std::string& data = dataset();
  const Batch b = read_dataset_file(data);
  const auto parts = split_sequential(b, 150);
  REQUIRE(run("fit-naive --data " + data + " --tau 0.6 --m 150 --out " + path("naive.csv")) == 0);
  CHECK(read_report(path("naive.csv")).coef == naive_dc(parts, QuantileLevel(0.6)));
  REQUIRE(run("fit-all --data " + data + " --tau 0.6 --m 150 --out " + path("all.csv")) == 0);
  CHECK(read_report(path("all.csv")).coef == qr_all(b, QuantileLevel(0.6)));
}

TEST_CASE("shuffle and adaptive options") {
  const std::string& data = dataset();
  REQUIRE(run("fit-dc --data " + data + " --tau 0.5 --m 100 --shuffle 3 --out " + path("s1.csv")) == 0);
  REQUIRE(run("fit-dc --data " + data + " --tau 0.5 --m 100 --shuffle 3 --out " + path("s2.csv")) == 0);
  REQUIRE(run("fit-dc --data " + data + " --tau 0.5 --m 100 --out " + path("s0.csv")) == 0);
  CHECK(slurp(path("s1.csv")) == slurp(path("s2.csv")));
  CHECK(read_report(path("s1.csv")).coef != read_report(path("s0.csv")).coef);

  {
    std::ofstream grid(path("grid.csv"));
    grid << "c\n0.5\n1\n2\n4\n";
  }
  REQUIRE(run("fit-dc --data " + data + " --tau 0.5 --m 100 --q 2 --adaptive " + path("grid.csv") + " --out " +
              path("ad.csv")) == 0);
  const Report ad = read_report(path("ad.csv"));
  for (const auto& row : ad.rows.at("c")) {
    const double c = std::stod(row[2]);
    CHECK((c == 0.5 || c == 1.0 || c == 2.0 || c == 4.0));
  }
  REQUIRE(run("fit-dc --data " + data + " --tau 0.5 --m 100 --q 2 --c 1 2 --out " + path("cc.csv")) == 0);
  CHECK(std::stod(read_report(path("cc.csv")).rows.at("c")[1][2]) == 2.0);
}

TEST_CASE("fit-online emits checkpoint rows and a final row") {
  REQUIRE(run("gen --n 6000 --p 2 --seed 5 --out " + path("stream.csv")) == 0);
  REQUIRE(run("fit-online --data " + path("stream.csv") + " --tau 0.5 --m 100 --out " + path("online.csv")) == 0);
  const auto rows = read_csv(path("online.csv"));
  // 100^1.5 = 1000, 100^1.75 = 3162, then the end of the 5900-sample stream.
  REQUIRE(rows.size() == 4);
  CHECK(rows[0][0] == "j");
  CHECK(rows[1][0] == "1000");
  CHECK(rows[2][0] == "3162");
  CHECK(rows[3][0] == "5900");
  CHECK(rows[3][2] == "6000");
  CHECK(std::stod(rows[3].back()) > 0.0);

  REQUIRE(run("fit-online --data " + path("stream.csv") + " --tau 0.5 --m 100 --stride 250 --out " +
              path("online_s.csv")) == 0);
  const auto sparse = read_csv(path("online_s.csv"));
  REQUIRE(sparse.size() == 4);
  CHECK(std::stod(sparse[3][8]) == doctest::Approx(std::stod(rows[3][8])).epsilon(1e-8));
}

TEST_CASE("experiment command") {
  {
    std::ofstream cfg(path("exp.cfg"));
    cfg << "p = 3\nm = 100\nn = 2000\ntau = 0.5\nmethod = dc_leqr, qr_all\nq = 2, 3\nreps = 4\n";
  }
  REQUIRE(run("experiment --config " + path("exp.cfg") + " --dry-run") == 0);
  const std::string plan = slurp(path("stdout.txt"));
  CHECK(plan.find("reps 4") != std::string::npos);
  CHECK(plan.find("summary_rows 4") != std::string::npos);

  REQUIRE(run("experiment --config " + path("exp.cfg") + " --out " + path("summary.csv") + " --trials " +
              path("trials.csv")) == 0);
  const auto rows = read_csv(path("summary.csv"));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0][0] == "method");
  CHECK(rows[1][0] == "dc_leqr");
  CHECK(rows[3][0] == "qr_all");
  CHECK(read_csv(path("trials.csv")).size() == 1 + 4 * 4);

  {
    std::ofstream cfg(path("bad.cfg"));
    cfg << "p = 3\n# comment\nreps = many\n";
  }
  CHECK(run("experiment --config " + path("bad.cfg")) == 23);
  CHECK(slurp(path("stderr.txt")).find("line 3") != std::string::npos);
}

TEST_CASE("simnet matches fit-dc and reports communication") {
  REQUIRE(run("gen --n 2000 --p 3 --seed 8 --out " + path("net.csv")) == 0);
  REQUIRE(run("fit-dc --data " + path("net.csv") + " --tau 0.4 --m 100 --q 3 --out " + path("seq.csv")) == 0);
  const Report seq = read_report(path("seq.csv"));
  for (const std::string topo : {"star", "chain", "binary"}) {
    REQUIRE(run("simnet --data " + path("net.csv") + " --topology " + topo + " --nodes 20 --tau 0.4 --q 3 --out " +
                path("net_" + topo + ".csv") + " --comm " + path("comm_" + topo + ".csv")) == 0);
    const Report net = read_report(path("net_" + topo + ".csv"));
    CHECK((net.coef - seq.coef).norm() <= 1e-10 * seq.coef.norm());
    const auto comm = read_csv(path("comm_" + topo + ".csv"));
    REQUIRE(comm.size() == 5);
    CHECK(comm[4][0] == "total");
    CHECK(std::stoll(comm[4][2]) == 3 * 19 * uplink_payload(4));
    CHECK(std::stoll(comm[4][1]) == 3 * 2 * 19);
  }

  REQUIRE(run("simnet --data " + path("net.csv") + " --nodes 1 --tau 0.4 --q 2 --out " + path("one.csv") +
              " --comm " + path("one_comm.csv")) == 0);
  REQUIRE(run("fit-dc --data " + path("net.csv") + " --tau 0.4 --m 2000 --q 2 --out " + path("one_dc.csv")) == 0);
  CHECK(read_report(path("one.csv")).coef == read_report(path("one_dc.csv")).coef);
  CHECK(read_csv(path("one_comm.csv"))[3][1] == "0");

  {
    std::ofstream topo(path("tree.csv"));
    topo << "node_id,parent_id\n0,-1\n1,0\n2,1\n3,1\n";
  }
  REQUIRE(run("simnet --data " + path("net.csv") + " --topology-file " + path("tree.csv") +
              " --tau 0.4 --q 2 --comm " + path("tree_comm.csv")) == 0);
  CHECK(read_csv(path("tree_comm.csv")).back()[4] == "2");
  REQUIRE(run("simnet --data " + path("net.csv") + " --topology-file " + path("tree.csv") +
              " --tau 0.4 --q 2 --comm " + path("tree_comm2.csv")) == 0);
  CHECK(slurp(path("tree_comm.csv")) == slurp(path("tree_comm2.csv")));
}

TEST_CASE("errors map to distinct exit codes") {
  const std::string& data = dataset();
  CHECK(run("fit-dc --data " + data + " --tau 1.5 --m 100") == 10);
  CHECK(slurp(path("stderr.txt")).find("InvalidArgument") != std::string::npos);
  CHECK(run("fit-dc --data " + data + " --tau 0.5 --m 3") == 15);
  CHECK(run("simnet --data " + data + " --topology kary --arity 1 --nodes 4 --tau 0.5") == 21);
  {
    std::ofstream bad(path("broken.csv"));
    bad << "y,x1\n1,2\n3\n";
  }
  CHECK(run("fit-dc --data " + path("broken.csv") + " --tau 0.5 --m 1") == 23);
  CHECK(run("fit-dc --data " + data + " --tau 0.5") != 0);
  CHECK(run("fit-dc --data " + data + " --tau 0.5 --m 100 --bogus") != 0);
  CHECK(run("frobnicate") != 0);
  CHECK(run("fit-dc --data /nonexistent.csv --tau 0.5 --m 100") != 0);
}

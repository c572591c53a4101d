#include "memquant/nettree.hpp"

#include <istream>
#include <sstream>

namespace memquant {

namespace {

Error at_node(const Error& e, int node) {
  return Error(e.kind(), "node " + std::to_string(node) + ": " + e.detail());
}

// Post-order so that every child is finished before its parent.
std::vector<int> post_order(const std::vector<std::vector<int>>& children) {
  std::vector<int> order;
  std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < children[static_cast<std::size_t>(node)].size()) {
      const int child = children[static_cast<std::size_t>(node)][next++];
      stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

TopologyKind parse_topology_kind(const std::string& name) {
  if (name == "star") return TopologyKind::Star;
  if (name == "chain") return TopologyKind::Chain;
  if (name == "kary" || name == "k-ary" || name == "binary") return TopologyKind::KAry;
  throw Error(ErrorKind::InvalidArgument, "unknown topology '" + name + "'");
}

std::vector<std::vector<int>> TreeTopology::children() const {
  std::vector<std::vector<int>> out(parent.size());
  for (int k = 1; k < size(); ++k) out[static_cast<std::size_t>(parent[static_cast<std::size_t>(k)])].push_back(k);
  return out;
}

int TreeTopology::depth() const {
  validate();
  std::vector<int> level(parent.size(), -1);
  level[0] = 0;
  int deepest = 0;
  for (int k = 1; k < size(); ++k) {
    // Walk up until a node with a known level.
    std::vector<int> path;
    int cur = k;
    while (level[static_cast<std::size_t>(cur)] < 0) {
      path.push_back(cur);
      cur = parent[static_cast<std::size_t>(cur)];
    }
    int l = level[static_cast<std::size_t>(cur)];
    for (auto it = path.rbegin(); it != path.rend(); ++it) level[static_cast<std::size_t>(*it)] = ++l;
    deepest = std::max(deepest, level[static_cast<std::size_t>(k)]);
  }
  return deepest;
}

void TreeTopology::validate() const {
  if (parent.empty()) throw Error(ErrorKind::InvalidArgument, "topology has no nodes");
  if (parent[0] != -1) throw Error(ErrorKind::InvalidArgument, "node 0 must be the root");
  const int n = size();
  for (int k = 1; k < n; ++k) {
    const int pk = parent[static_cast<std::size_t>(k)];
    if (pk < 0 || pk >= n || pk == k) {
      throw Error(ErrorKind::InvalidArgument, "node " + std::to_string(k) + " has an invalid parent");
    }
  }
  // Every node must reach the root within n steps.
  for (int k = 1; k < n; ++k) {
    int cur = k;
    int steps = 0;
    while (cur != 0) {
      cur = parent[static_cast<std::size_t>(cur)];
      if (++steps > n) throw Error(ErrorKind::InvalidArgument, "topology has a cycle through node " + std::to_string(k));
    }
  }
}

TreeTopology build_topology(TopologyKind kind, int nodes, int arity) {
  if (nodes < 1) throw Error(ErrorKind::InvalidArgument, "a topology needs at least one node");
  TreeTopology t;
  t.parent.assign(static_cast<std::size_t>(nodes), -1);
  switch (kind) {
    case TopologyKind::Star:
      for (int k = 1; k < nodes; ++k) t.parent[static_cast<std::size_t>(k)] = 0;
      break;
    case TopologyKind::Chain:
      for (int k = 1; k < nodes; ++k) t.parent[static_cast<std::size_t>(k)] = k - 1;
      break;
    case TopologyKind::KAry:
      if (arity < 2) throw Error(ErrorKind::InvalidArity, "k-ary trees need k >= 2, got " + std::to_string(arity));
      for (int k = 1; k < nodes; ++k) t.parent[static_cast<std::size_t>(k)] = (k - 1) / arity;
      break;
  }
  return t;
}

TreeTopology read_topology_csv(std::istream& in) {
  std::string line;
  int line_no = 0;
  const auto fail = [&](const std::string& msg) {
    throw Error(ErrorKind::Parse, "topology line " + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(in, line)) throw Error(ErrorKind::Parse, "topology file is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "node_id,parent_id") fail("expected header node_id,parent_id");
  std::vector<std::pair<int, int>> edges;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail("expected two fields");
    try {
      std::size_t used = 0;
      const std::string id_text = line.substr(0, comma);
      const int id = std::stoi(id_text, &used);
      if (used != id_text.size()) fail("bad node id");
      const std::string parent_text = line.substr(comma + 1);
      int parent = -1;
      if (!parent_text.empty()) {
        parent = std::stoi(parent_text, &used);
        if (used != parent_text.size()) fail("bad parent id");
      }
      edges.emplace_back(id, parent);
    } catch (const std::logic_error&) {
      fail("fields must be integers");
    }
  }
  TreeTopology t;
  t.parent.assign(edges.size(), -2);
  for (const auto& [id, parent] : edges) {
    if (id < 0 || id >= static_cast<int>(edges.size())) {
      throw Error(ErrorKind::Parse, "node ids must be 0.." + std::to_string(edges.size() - 1));
    }
    if (t.parent[static_cast<std::size_t>(id)] != -2) {
      throw Error(ErrorKind::Parse, "node " + std::to_string(id) + " listed twice");
    }
    t.parent[static_cast<std::size_t>(id)] = parent;
  }
  t.validate();
  return t;
}

std::int64_t uplink_payload(int dim) noexcept {
  const std::int64_t d = dim;
  return d * (d + 1) / 2 + d + 1;
}

std::int64_t downlink_payload(int dim) noexcept { return dim; }

std::int64_t CommStats::total_messages() const noexcept {
  std::int64_t s = 0;
  for (const auto& r : rounds) s += r.messages;
  return s;
}

std::int64_t CommStats::total_uplink_scalars() const noexcept {
  std::int64_t s = 0;
  for (const auto& r : rounds) s += r.uplink_scalars;
  return s;
}

std::int64_t CommStats::total_downlink_scalars() const noexcept {
  std::int64_t s = 0;
  for (const auto& r : rounds) s += r.downlink_scalars;
  return s;
}

NetRound simulate_dc_round(const TreeTopology& topology, std::span<const Batch> node_batches,
                           const Coefficients& beta0, Bandwidth h, QuantileLevel tau) {
  topology.validate();
  if (node_batches.size() != static_cast<std::size_t>(topology.size())) {
    throw Error(ErrorKind::CountMismatch, std::to_string(node_batches.size()) + " batches for " +
                                              std::to_string(topology.size()) + " nodes");
  }
  const auto children = topology.children();
  const int dim = static_cast<int>(beta0.size());
  std::vector<LocalStats> partial(node_batches.size());
  for (const int node : post_order(children)) {
    auto& own = partial[static_cast<std::size_t>(node)];
    try {
      own = compute_local_stats(node_batches[static_cast<std::size_t>(node)], beta0, h, tau);
      for (const int child : children[static_cast<std::size_t>(node)]) {
        own += partial[static_cast<std::size_t>(child)];
        partial[static_cast<std::size_t>(child)] = LocalStats();
      }
    } catch (const Error& e) {
      throw at_node(e, node);
    }
  }
  NetRound out;
  out.merged = std::move(partial[0]);
  const std::int64_t edges = topology.size() - 1;
  out.comm.messages = 2 * edges;
  out.comm.uplink_scalars = edges * uplink_payload(dim);
  out.comm.downlink_scalars = edges * downlink_payload(dim);
  out.comm.depth = topology.depth();
  return out;
}

NetResult simulate_dc_leqr(const TreeTopology& topology, std::span<const Batch> node_batches, const DcConfig& cfg) {
  cfg.validate();
  if (cfg.adaptive_grid) throw Error(ErrorKind::InvalidArgument, "adaptive bandwidth is not simulated over the tree");
  if (node_batches.empty()) throw Error(ErrorKind::InvalidArgument, "no batches");
  const int dim = node_batches.front().dim();
  NetResult result;
  auto& diag = result.diagnostics;
  diag.n = static_cast<std::int64_t>(total_count(node_batches));
  diag.m = cfg.m > 0 ? cfg.m : static_cast<std::int64_t>(node_batches.front().size());
  const auto p = bandwidth_dimension(dim - 1);

  if (cfg.beta0) {
    diag.beta0 = *cfg.beta0;
  } else {
    try {
      diag.beta0 = solve_qr(node_batches.front(), cfg.tau, cfg.qr);
    } catch (const Error& e) {
      throw Error(e.kind(), "round 1: " + at_node(e, 0).detail());
    }
  }

  Coefficients beta = diag.beta0;
  for (int g = 1; g <= cfg.q; ++g) {
    try {
      RoundRecord rec;
      rec.round = g;
      rec.c = cfg.bandwidths ? 1.0 : cfg.scale_for_round(g);
      const double base = cfg.bandwidths ? (*cfg.bandwidths)[static_cast<std::size_t>(g - 1)]
                                         : bandwidth_schedule(g, p, diag.m, diag.n).value();
      rec.bandwidth = rec.c * base;
      auto round = simulate_dc_round(topology, node_batches, beta, Bandwidth(rec.bandwidth), cfg.tau);
      const auto step = solve_step(round.merged, beta);
      rec.beta = step.beta;
      rec.cg_iterations = step.cg_iterations;
      rec.agg = std::move(round.merged);
      round.comm.round = g;
      result.comm.rounds.push_back(round.comm);
      beta = rec.beta;
      diag.rounds.push_back(std::move(rec));
    } catch (const Error& e) {
      throw Error(e.kind(), "round " + std::to_string(g) + ": " + e.detail());
    }
  }
  result.beta = beta;
  return result;
}

}  // namespace memquant

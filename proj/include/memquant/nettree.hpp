// nettree.hpp
//
// Simulated tree-structured sensor network. The root broadcasts the current
// estimate, every node computes local statistics on the batch it holds, and
// sums travel leaf to root with each node adding its children in ascending id
// order. Communication is counted in scalars.

#ifndef MEMQUANT_NETTREE_HPP
#define MEMQUANT_NETTREE_HPP

#include "memquant/core.hpp"
#include "memquant/leqr.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace memquant {

enum class TopologyKind { Star, KAry, Chain };

TopologyKind parse_topology_kind(const std::string& name);

/// Node 0 is the root (the base station). Node k holds batch k.
struct TreeTopology {
  /// parent[0] == -1.
  std::vector<int> parent;

  int size() const noexcept { return static_cast<int>(parent.size()); }
  /// Children of every node in ascending id order.
  std::vector<std::vector<int>> children() const;
  /// Longest root-to-node path in edges.
  int depth() const;
  /// Throws InvalidArgument unless the parent array is a tree rooted at 0.
  void validate() const;
};

/// Deterministic star, balanced `arity`-ary (heap order) or chain on n nodes.
/// Throws InvalidArity when a k-ary tree has arity < 2.
TreeTopology build_topology(TopologyKind kind, int nodes, int arity = 2);

/// CSV with header node_id,parent_id; the root's parent is -1 or blank.
TreeTopology read_topology_csv(std::istream& in);

/// Scalars sent up one edge: packed symmetric V, U and the count.
std::int64_t uplink_payload(int dim) noexcept;
/// Scalars sent down one edge: the broadcast estimate.
std::int64_t downlink_payload(int dim) noexcept;

struct RoundComm {
  int round = 0;
  std::int64_t messages = 0;
  std::int64_t uplink_scalars = 0;
  std::int64_t downlink_scalars = 0;
  int depth = 0;
};

struct CommStats {
  std::vector<RoundComm> rounds;

  std::int64_t total_messages() const noexcept;
  std::int64_t total_uplink_scalars() const noexcept;
  std::int64_t total_downlink_scalars() const noexcept;
  std::int64_t total_bytes() const noexcept { return 8 * (total_uplink_scalars() + total_downlink_scalars()); }
};

struct NetRound {
  LocalStats merged;
  RoundComm comm;
};

/// One broadcast and bottom-up reduction. `node_batches` holds one batch per
/// node. Errors name the node that raised them.
NetRound simulate_dc_round(const TreeTopology& topology, std::span<const Batch> node_batches,
                           const Coefficients& beta0, Bandwidth h, QuantileLevel tau);

struct NetResult {
  Coefficients beta;
  FitDiagnostics diagnostics;
  CommStats comm;
};

/// The divide-and-conquer driver run over the tree: the root fits the initial
/// estimate on its own batch and solves between rounds. Same estimates as
/// dc_leqr on the same partitions up to summation order. Adaptive bandwidth
/// grids are not supported here.
NetResult simulate_dc_leqr(const TreeTopology& topology, std::span<const Batch> node_batches, const DcConfig& cfg);

}  // namespace memquant

#endif  // MEMQUANT_NETTREE_HPP

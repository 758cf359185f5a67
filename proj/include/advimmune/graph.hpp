#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace advimmune {

using NodeId = std::int32_t;
using NodePair = std::pair<NodeId, NodeId>;

// Normalized unordered pair (smaller id first).
inline NodePair make_pair_key(NodeId a, NodeId b) { return a < b ? NodePair{a, b} : NodePair{b, a}; }

// How the attacker's flips act on the adjacency.
//  kDirectedFragile: a flip (i -> j) rewrites row i only and is charged to i.
//  kUndirectedPair:  a flip {i, j} rewrites both rows and is charged to both endpoints.
enum class EdgeMode { kDirectedFragile, kUndirectedPair };

std::string_view to_string(EdgeMode mode);
EdgeMode parse_edge_mode(std::string_view text);

// Undirected simple graph. Immutable after construction.
class Graph {
 public:
  Graph() = default;
  explicit Graph(NodeId n);

  // Duplicate pairs (in either orientation) are merged. Throws std::invalid_argument
  // on self-loops or out-of-range ids.
  static Graph from_edges(NodeId n, std::span<const NodePair> edges);

  NodeId num_nodes() const { return static_cast<NodeId>(adj_.size()); }
  std::size_t num_edges() const { return num_edges_; }
  std::span<const NodeId> neighbors(NodeId v) const { return adj_[v]; }
  int degree(NodeId v) const { return static_cast<int>(adj_[v].size()); }
  std::vector<int> degrees() const;
  bool has_edge(NodeId a, NodeId b) const;
  // All edges as (u, v) with u < v, lexicographic.
  std::vector<NodePair> edges() const;

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::vector<std::vector<NodeId>> adj_;
  std::size_t num_edges_ = 0;
};

// Row-oriented (possibly asymmetric) adjacency; the shape of a perturbed graph
// in directed-fragile mode. Out-neighbour lists are sorted.
class Digraph {
 public:
  Digraph() = default;
  explicit Digraph(std::vector<std::vector<NodeId>> rows);
  static Digraph from(const Graph& g);

  NodeId num_nodes() const { return static_cast<NodeId>(rows_.size()); }
  std::span<const NodeId> out(NodeId v) const { return rows_[v]; }
  int out_degree(NodeId v) const { return static_cast<int>(rows_[v].size()); }
  bool has_arc(NodeId a, NodeId b) const;
  std::uint64_t fingerprint() const { return fingerprint_; }

  friend bool operator==(const Digraph& a, const Digraph& b) { return a.rows_ == b.rows_; }

 private:
  std::vector<std::vector<NodeId>> rows_;
  std::uint64_t fingerprint_ = 0;
};

struct Flip {
  NodeId from;
  NodeId to;
  int sign;  // +1 adds a non-edge, -1 removes an edge

  friend auto operator<=>(const Flip&, const Flip&) = default;
};

// A set of flips against a base graph. Undirected flips are stored with from < to.
class PerturbationDelta {
 public:
  PerturbationDelta() = default;
  // Sorts and normalizes; throws std::invalid_argument on duplicate pairs,
  // self-pairs or signs other than +-1.
  PerturbationDelta(EdgeMode mode, std::vector<Flip> flips);

  EdgeMode mode() const { return mode_; }
  std::span<const Flip> flips() const { return flips_; }
  bool empty() const { return flips_.empty(); }
  std::size_t size() const { return flips_.size(); }

  PerturbationDelta negated() const;
  // Throws std::invalid_argument when a flip adds an existing edge, removes an
  // absent one, or names a node outside the graph.
  void validate_against(const Graph& g) const;
  // Number of flips charged to each node (both endpoints in undirected mode).
  std::vector<int> charges(NodeId n) const;

  friend bool operator==(const PerturbationDelta&, const PerturbationDelta&) = default;

 private:
  EdgeMode mode_ = EdgeMode::kUndirectedPair;
  std::vector<Flip> flips_;
};

// Applies an undirected delta. The input graph is unchanged.
Graph apply_delta(const Graph& g, const PerturbationDelta& d);
// Applies a delta of either mode, producing the row adjacency of the perturbed graph.
Digraph perturb(const Graph& g, const PerturbationDelta& d);

// Edge-list text: `#` comments, optional first line `n=<int>`, then `<u> <v>` per line.
// Throws ParseError naming the offending line.
Graph load_edge_list(std::string_view text);

struct RemappedGraph {
  Graph graph;
  std::vector<long long> original_ids;  // dense id -> id in the file
};
// As load_edge_list, but arbitrary non-negative ids are remapped to 0..n-1 in
// order of first appearance.
RemappedGraph load_edge_list_remapped(std::string_view text);

std::string to_edge_list(const Graph& g);

// Zachary's karate club network (34 nodes, 78 edges).
Graph karate();
// Faction of each karate member: 0 = instructor's group, 1 = administrator's group.
std::vector<int> karate_factions();

}  // namespace advimmune

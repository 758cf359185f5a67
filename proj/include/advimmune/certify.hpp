#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "advimmune/graph.hpp"
#include "advimmune/logits.hpp"
#include "advimmune/parallel.hpp"
#include "advimmune/ppr.hpp"

namespace advimmune {

// Per-node cap on incident flips, evaluated on the clean graph.
struct LocalBudgetRule {
  enum class Kind { kDegreeOffset, kConstant, kExplicit };
  Kind kind = Kind::kDegreeOffset;
  int offset = 6;             // kDegreeOffset: b_t = max(deg(t) - offset, 0)
  int constant = 0;           // kConstant
  std::vector<int> values;    // kExplicit

  static LocalBudgetRule degree_offset(int offset) { return {Kind::kDegreeOffset, offset, 0, {}}; }
  static LocalBudgetRule uniform(int b) { return {Kind::kConstant, 0, b, {}}; }
  static LocalBudgetRule explicit_values(std::vector<int> v) { return {Kind::kExplicit, 0, 0, std::move(v)}; }

  std::vector<int> budgets(const Graph& g) const;
  std::string describe() const;
};

// The remove-add threat model: any pair may be added or removed, subject to
// local budgets and an optional global budget (honoured only by the oracle).
struct PerturbationScenario {
  LocalBudgetRule local_budget;
  std::optional<int> global_budget;
  EdgeMode edge_mode = EdgeMode::kDirectedFragile;
};

// Protected pairs and nodes. A pair is protected when it is listed or when
// either endpoint is a protected node.
class ImmuneMask {
 public:
  void protect_pair(NodeId a, NodeId b) { pairs_.insert(make_pair_key(a, b)); }
  void protect_node(NodeId v) { nodes_.insert(v); }
  bool is_protected(NodeId a, NodeId b) const {
    return nodes_.contains(a) || nodes_.contains(b) || pairs_.contains(make_pair_key(a, b));
  }
  bool node_protected(NodeId v) const { return nodes_.contains(v); }
  bool pair_listed(NodeId a, NodeId b) const { return pairs_.contains(make_pair_key(a, b)); }

  const std::set<NodePair>& protected_pairs() const { return pairs_; }
  const std::set<NodeId>& protected_nodes() const { return nodes_; }
  std::size_t edge_budget_used() const { return pairs_.size(); }
  std::size_t node_budget_used() const { return nodes_.size(); }
  bool empty() const { return pairs_.empty() && nodes_.empty(); }
  // True when every pair protected here is also protected by `other`.
  bool subset_of(const ImmuneMask& other) const;

  friend bool operator==(const ImmuneMask&, const ImmuneMask&) = default;

 private:
  std::set<NodePair> pairs_;
  std::set<NodeId> nodes_;
};

// Drops every flip that touches a protected pair or node (A' o M).
PerturbationDelta apply_mask(const PerturbationDelta& d, const ImmuneMask& mask);

// Pi-PPNP margin of node t between its reference class and class k on a
// (possibly perturbed) graph: pi(e_t) . (H[:, y_t] - H[:, k]).
double margin(NodeId t, int k, const Digraph& g, const PPRContext& ctx, const Logits& l);
double margin(NodeId t, int k, const Graph& g, const PPRContext& ctx, const Logits& l);

struct WorstCase {
  double margin = 0.0;
  PerturbationDelta delta;
  bool converged = true;
  int sweeps = 0;
  std::vector<double> objective_trace;  // attacker objective after each evaluation
};

struct ClassWorstCase {
  double margin = 0.0;
  int worst_class = 0;
  PerturbationDelta delta;
  bool converged = true;
};

inline constexpr int kMaxPolicySweeps = 100;

// Minimum margin over admissible perturbations, found by policy iteration.
// Exact in directed-fragile mode; a descent heuristic (upper bound on the true
// minimum) in undirected-pair mode. Requires l.y_ref and k != y_t.
WorstCase worst_case_margin(NodeId t, int k, const Graph& g, const PPRContext& ctx,
                            const Logits& l, const PerturbationScenario& sc,
                            const ImmuneMask& mask, const PerturbationDelta* warm = nullptr);

// Exhaustive minimum over every budget-feasible flip subset, including the
// global budget. Throws std::length_error beyond kMaxEnumerablePairs admissible pairs.
inline constexpr std::size_t kMaxEnumerablePairs = 22;
WorstCase brute_force_worst_margin(NodeId t, int k, const Graph& g, const PPRContext& ctx,
                                   const Logits& l, const PerturbationScenario& sc,
                                   const ImmuneMask& mask);
// Admissible flips (pairs in undirected mode, ordered pairs in directed mode).
std::vector<Flip> admissible_flips(const Graph& g, const PerturbationScenario& sc,
                                   const ImmuneMask& mask);

ClassWorstCase worst_margin_all_classes(NodeId t, const Graph& g, const PPRContext& ctx,
                                        const Logits& l, const PerturbationScenario& sc,
                                        const ImmuneMask& mask);
ClassWorstCase brute_force_all_classes(NodeId t, const Graph& g, const PPRContext& ctx,
                                       const Logits& l, const PerturbationScenario& sc,
                                       const ImmuneMask& mask);

struct TargetCertificate {
  NodeId node = 0;
  double worst_margin = 0.0;
  int worst_class = 0;
  std::shared_ptr<const PerturbationDelta> worst_delta;
  // Worst delta found against each class (null for the reference class).
  std::vector<std::shared_ptr<const PerturbationDelta>> class_deltas;
  bool robust = false;
  bool converged = true;
};

enum class CertifierKind { kPolicyIteration, kBruteForce };

struct CertifyOptions {
  CertifierKind kind = CertifierKind::kPolicyIteration;
  Exec exec = Exec::kParallel;
  // Undirected mode only: run one search per target instead of one per
  // (reference class, class) group shared by all targets of that class.
  bool per_target = false;
  int max_sweeps = kMaxPolicySweeps;
};

struct CertificationResult {
  std::vector<TargetCertificate> targets;  // sorted by node id
  // Worst delta per (reference class, class) group; used to warm-start.
  std::map<std::pair<int, int>, std::shared_ptr<const PerturbationDelta>> group_deltas;

  std::size_t robust_count() const;
  double total_margin() const;
  const TargetCertificate* find(NodeId t) const;
  bool all_converged() const;
};

CertificationResult certify_graph(std::span<const NodeId> targets, const Graph& g,
                                  const PPRContext& ctx, const Logits& l,
                                  const PerturbationScenario& sc, const ImmuneMask& mask,
                                  const CertifyOptions& opts = {},
                                  const CertificationResult* warm = nullptr);

std::vector<NodeId> all_nodes(NodeId n);

}  // namespace advimmune

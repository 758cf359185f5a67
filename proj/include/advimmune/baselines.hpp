#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advimmune/certify.hpp"

namespace advimmune {

enum class BaselineKind { kRandom, kAttackRandom, kJaccard, kCosine, kBridgeness, kBetweenness };

std::string_view to_string(BaselineKind k);
// Throws UsageError on an unknown name.
BaselineKind parse_baseline_kind(std::string_view name);

// Attribute similarities of rows a and b. Jaccard binarizes at > 0; both are
// 0 when either row is all zero.
double attribute_jaccard(const Eigen::MatrixXd& x, NodeId a, NodeId b);
double attribute_cosine(const Eigen::MatrixXd& x, NodeId a, NodeId b);
// Jaccard similarity of the two neighbour sets (each excluding the other endpoint).
double neighbor_jaccard(const Graph& g, NodeId a, NodeId b);
// Unnormalized shortest-path betweenness (each unordered pair counted once).
std::vector<double> betweenness(const Graph& g, Exec exec = Exec::kParallel);

struct BaselineInputs {
  const Eigen::MatrixXd* features = nullptr;        // jaccard, cosine
  const std::vector<int>* labels = nullptr;          // jaccard, cosine
  const PerturbationDelta* attack_delta = nullptr;   // attack-random
  std::uint64_t seed = 0;
};

// Protected pairs chosen by a heuristic. Existing edges receive ceil(budget / 2)
// of the budget and non-edges the rest; a short pool passes its remainder to the other.
ImmuneMask baseline_edge(BaselineKind kind, const Graph& g, std::size_t budget,
                         const BaselineInputs& in);
ImmuneMask baseline_node(BaselineKind kind, const Graph& g, std::size_t budget,
                         const BaselineInputs& in);

enum class SimilarityMetric { kAttributeJaccard, kAttributeCosine, kNeighborJaccard, kBetweenness };

struct SimilarityScores {
  SimilarityMetric metric;
  std::map<NodePair, double> pair_scores;
  std::vector<double> node_scores;
};

// Pair scores over existing edges and per-node means over incident edges
// (betweenness fills node scores only). Attribute metrics need features.
SimilarityScores score_graph(SimilarityMetric metric, const Graph& g,
                             const Eigen::MatrixXd* features, Exec exec = Exec::kParallel);

struct Histogram {
  std::string metric;
  std::string group;       // "protected" or "other"
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  double mean = 0.0;       // 0 when empty
};

// Distributions of structural, attribute and label similarity for protected
// pairs (against unprotected edges) and protected nodes (against the rest).
struct SimilarityReport {
  std::vector<Histogram> pairs;
  std::vector<Histogram> nodes;

  // `metric,group,bin_lo,bin_hi,count` rows.
  static std::string to_csv(const std::vector<Histogram>& hs);
};

SimilarityReport similarity_report(const Graph& g, const Eigen::MatrixXd* features,
                                   const std::vector<int>* labels, const ImmuneMask& mask,
                                   int bins = 10);

}  // namespace advimmune

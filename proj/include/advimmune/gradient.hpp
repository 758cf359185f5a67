#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "advimmune/certify.hpp"

namespace advimmune {

enum class GradientForm {
  kExact,
  // Omits the row-normalization term; only useful as a negative control.
  kDropDegreeTerm,
};

// d m_{y_t,k}(t) / d A_ij on the row adjacency g, as a dense N x N matrix.
// Rows of zero out-degree are zero.
Eigen::MatrixXd margin_adj_gradient(NodeId t, int k, const Digraph& g, const PPRContext& ctx,
                                    const Logits& l, GradientForm form = GradientForm::kExact);
Eigen::MatrixXd margin_adj_gradient(NodeId t, int k, const Graph& g, const PPRContext& ctx,
                                    const Logits& l, GradientForm form = GradientForm::kExact);

// Margin of t against k with a real-valued adjacency (row sums as degrees).
double continuous_margin(NodeId t, int k, const Eigen::MatrixXd& adjacency,
                         const PPRContext& ctx, const Logits& l);

// Largest deviation between the analytic gradient and central differences of
// continuous_margin, relative to the largest gradient magnitude. Entries in
// zero-degree rows are skipped. Throws std::invalid_argument if step <= 0.
double finite_diff_check(NodeId t, int k, const Digraph& g, const PPRContext& ctx,
                         const Logits& l, double step,
                         GradientForm form = GradientForm::kExact);

// A target's current adversary: the class it is attacked towards and the flips used.
struct TargetAttack {
  NodeId node = 0;
  int worst_class = 0;
  std::shared_ptr<const PerturbationDelta> delta;
};

std::vector<TargetAttack> attacks_from(const CertificationResult& cert);

struct MetaGradient {
  // Derivative of the summed margins w.r.t. the mask entry of each
  // delta-active, unprotected pair (both orientations combined).
  std::map<NodePair, double> edge_grad;
  // Derivative w.r.t. each node's mask entry; zero on protected nodes.
  Eigen::VectorXd node_grad;

  double edge_value(NodePair p) const;
  double node_value(NodeId v) const { return -node_grad[v]; }
};

// Edge-level meta-gradient of sum_t m_{y_t,k_t}(t) with every target evaluated
// on its own masked worst-case graph. node_grad is left empty.
MetaGradient meta_gradient_edge(const Graph& g, std::span<const TargetAttack> attacks,
                                const ImmuneMask& mask, const PPRContext& ctx, const Logits& l,
                                Exec exec = Exec::kParallel, ResolventCache* cache = nullptr,
                                GradientForm form = GradientForm::kExact);

// Node-level meta-gradient through the outer product of the node mask.
MetaGradient meta_gradient_node(const Graph& g, std::span<const TargetAttack> attacks,
                                const ImmuneMask& mask, const PPRContext& ctx, const Logits& l,
                                Exec exec = Exec::kParallel, ResolventCache* cache = nullptr);

}  // namespace advimmune

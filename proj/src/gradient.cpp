#include "advimmune/gradient.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace advimmune {

namespace {

Eigen::VectorXd class_reward(const Logits& l, NodeId t, int k) {
  if (l.y_ref.empty()) throw std::invalid_argument("logits carry no reference classes");
  return l.h.col(l.y_ref[t]) - l.h.col(k);
}

// Gradient rows from u = w^T Q and v = Q r:
// scale * u_i / d_i * (v_j - (P v)_i).
struct GradientFactors {
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  Eigen::VectorXd pv;
};

GradientFactors factors(const Resolvent& res, const Eigen::VectorXd& weights,
                        const Eigen::VectorXd& reward) {
  GradientFactors f;
  f.u = res.solve_transposed(weights);
  f.v = res.solve(reward);
  f.pv = res.apply_transition(f.v);
  return f;
}

double entry(const GradientFactors& f, const Digraph& g, double alpha, NodeId i, NodeId j,
             GradientForm form) {
  const int d = g.out_degree(i);
  if (d == 0) return 0.0;
  const double centre = form == GradientForm::kExact ? f.pv[i] : 0.0;
  return alpha * (1.0 - alpha) * f.u[i] / d * (f.v[j] - centre);
}

}  // namespace

Eigen::MatrixXd margin_adj_gradient(NodeId t, int k, const Digraph& g, const PPRContext& ctx,
                                    const Logits& l, GradientForm form) {
  const NodeId n = g.num_nodes();
  if (t < 0 || t >= n || k < 0 || k >= l.num_classes()) {
    throw std::out_of_range("margin_adj_gradient: target or class out of range");
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  if (k == l.y_ref.at(t)) return out;
  Resolvent res(g, ctx);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  w[t] = 1.0;
  const auto f = factors(res, w, class_reward(l, t, k));
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = 0; j < n; ++j) out(i, j) = entry(f, g, ctx.alpha, i, j, form);
  }
  return out;
}

Eigen::MatrixXd margin_adj_gradient(NodeId t, int k, const Graph& g, const PPRContext& ctx,
                                    const Logits& l, GradientForm form) {
  return margin_adj_gradient(t, k, Digraph::from(g), ctx, l, form);
}

double continuous_margin(NodeId t, int k, const Eigen::MatrixXd& adjacency,
                         const PPRContext& ctx, const Logits& l) {
  const auto n = adjacency.rows();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = adjacency.row(i).sum();
    if (d == 0.0) {
      p(i, i) = 1.0;
    } else {
      p.row(i) = adjacency.row(i) / d;
    }
  }
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - ctx.alpha * p;
  Eigen::VectorXd v = system.fullPivLu().solve(class_reward(l, t, k));
  return (1.0 - ctx.alpha) * v[t];
}

double finite_diff_check(NodeId t, int k, const Digraph& g, const PPRContext& ctx,
                         const Logits& l, double step, GradientForm form) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  const NodeId n = g.num_nodes();
  const Eigen::MatrixXd analytic = margin_adj_gradient(t, k, g, ctx, l, form);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j : g.out(i)) a(i, j) = 1.0;
  }
  double max_diff = 0.0;
  double scale = 0.0;
  for (NodeId i = 0; i < n; ++i) {
    if (g.out_degree(i) == 0) continue;
    for (NodeId j = 0; j < n; ++j) {
      Eigen::MatrixXd plus = a, minus = a;
      plus(i, j) += step;
      minus(i, j) -= step;
      const double numeric =
          (continuous_margin(t, k, plus, ctx, l) - continuous_margin(t, k, minus, ctx, l)) /
          (2.0 * step);
      max_diff = std::max(max_diff, std::abs(numeric - analytic(i, j)));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic(i, j))});
    }
  }
  return scale == 0.0 ? max_diff : max_diff / scale;
}

std::vector<TargetAttack> attacks_from(const CertificationResult& cert) {
  std::vector<TargetAttack> out;
  out.reserve(cert.targets.size());
  for (const auto& c : cert.targets) out.push_back({c.node, c.worst_class, c.worst_delta});
  return out;
}

double MetaGradient::edge_value(NodePair p) const {
  auto it = edge_grad.find(make_pair_key(p.first, p.second));
  return it == edge_grad.end() ? 0.0 : -it->second;
}

namespace {

struct AttackGroup {
  const PerturbationDelta* delta;
  int cls;
  int other;
  std::vector<NodeId> members;
};

std::vector<AttackGroup> group_attacks(std::span<const TargetAttack> attacks, const Logits& l) {
  std::map<std::tuple<const PerturbationDelta*, int, int>, std::vector<NodeId>> keyed;
  std::vector<std::tuple<const PerturbationDelta*, int, int>> order;
  for (const auto& a : attacks) {
    if (a.worst_class == l.y_ref.at(a.node)) continue;
    auto key = std::make_tuple(a.delta.get(), l.y_ref[a.node], a.worst_class);
    auto [it, inserted] = keyed.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(a.node);
  }
  std::vector<AttackGroup> out;
  for (const auto& key : order) {
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), keyed[key]});
  }
  return out;
}

}  // namespace

MetaGradient meta_gradient_edge(const Graph& g, std::span<const TargetAttack> attacks,
                                const ImmuneMask& mask, const PPRContext& ctx, const Logits& l,
                                Exec exec, ResolventCache* cache, GradientForm form) {
  const NodeId n = g.num_nodes();
  const auto groups = group_attacks(attacks, l);
  std::vector<std::vector<std::pair<NodePair, double>>> partial(groups.size());

  parallel_for(static_cast<std::int64_t>(groups.size()), exec, [&](std::int64_t gi) {
    const AttackGroup& grp = groups[gi];
    if (grp.delta == nullptr) return;
    const PerturbationDelta masked = apply_mask(*grp.delta, mask);
    if (masked.empty()) return;
    const Digraph perturbed = perturb(g, masked);
    std::shared_ptr<const Resolvent> res = cache != nullptr
                                               ? cache->get(perturbed, ctx)
                                               : std::make_shared<const Resolvent>(perturbed, ctx);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (NodeId t : grp.members) w[t] += 1.0;
    const auto f = factors(*res, w, l.h.col(grp.cls) - l.h.col(grp.other));
    auto& out = partial[gi];
    for (const auto& flip : masked.flips()) {
      // A flip adds (+1) or removes (-1) the entry; the perturbed graph holds its result.
      double value = flip.sign * entry(f, perturbed, ctx.alpha, flip.from, flip.to, form);
      if (masked.mode() == EdgeMode::kUndirectedPair) {
        value += flip.sign * entry(f, perturbed, ctx.alpha, flip.to, flip.from, form);
      }
      out.emplace_back(make_pair_key(flip.from, flip.to), value);
    }
  });

  MetaGradient mg;
  for (const auto& part : partial) {
    for (const auto& [pair, value] : part) mg.edge_grad[pair] += value;
  }
  return mg;
}

MetaGradient meta_gradient_node(const Graph& g, std::span<const TargetAttack> attacks,
                                const ImmuneMask& mask, const PPRContext& ctx, const Logits& l,
                                Exec exec, ResolventCache* cache) {
  MetaGradient mg = meta_gradient_edge(g, attacks, mask, ctx, l, exec, cache);
  mg.node_grad = Eigen::VectorXd::Zero(g.num_nodes());
  for (const auto& [pair, value] : mg.edge_grad) {
    const auto [a, b] = pair;
    if (!mask.node_protected(b)) mg.node_grad[a] += value;
    if (!mask.node_protected(a)) mg.node_grad[b] += value;
  }
  for (NodeId v : mask.protected_nodes()) mg.node_grad[v] = 0.0;
  return mg;
}

}  // namespace advimmune

#include "advimmune/certify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "advimmune/error.hpp"
#include "policy_iteration.hpp"

namespace advimmune {

std::vector<int> LocalBudgetRule::budgets(const Graph& g) const {
  const NodeId n = g.num_nodes();
  std::vector<int> b(n, 0);
  switch (kind) {
    case Kind::kDegreeOffset:
      for (NodeId i = 0; i < n; ++i) b[i] = std::max(g.degree(i) - offset, 0);
      break;
    case Kind::kConstant:
      std::fill(b.begin(), b.end(), std::max(constant, 0));
      break;
    case Kind::kExplicit:
      if (static_cast<NodeId>(values.size()) != n) {
        throw DimensionError("explicit local budgets have " + std::to_string(values.size()) +
                             " entries for " + std::to_string(n) + " nodes");
      }
      for (NodeId i = 0; i < n; ++i) {
        if (values[i] < 0) throw DimensionError("negative local budget");
        b[i] = values[i];
      }
      break;
  }
  return b;
}

std::string LocalBudgetRule::describe() const {
  switch (kind) {
    case Kind::kDegreeOffset:
      return "max(degree - " + std::to_string(offset) + ", 0)";
    case Kind::kConstant:
      return "constant " + std::to_string(constant);
    case Kind::kExplicit:
      return "explicit per-node values";
  }
  return {};
}

bool ImmuneMask::subset_of(const ImmuneMask& other) const {
  for (NodeId v : nodes_) {
    if (!other.node_protected(v)) return false;
  }
  for (auto [a, b] : pairs_) {
    if (!other.is_protected(a, b)) return false;
  }
  return true;
}

PerturbationDelta apply_mask(const PerturbationDelta& d, const ImmuneMask& mask) {
  std::vector<Flip> kept;
  kept.reserve(d.size());
  for (const auto& f : d.flips()) {
    if (!mask.is_protected(f.from, f.to)) kept.push_back(f);
  }
  return PerturbationDelta(d.mode(), std::move(kept));
}

namespace {

void require_reference(const Logits& l, NodeId n) {
  l.validate(n);
  if (l.y_ref.empty()) throw std::invalid_argument("logits carry no reference classes");
}

Eigen::VectorXd class_reward(const Logits& l, int c, int k) { return l.h.col(c) - l.h.col(k); }

}  // namespace

double margin(NodeId t, int k, const Digraph& g, const PPRContext& ctx, const Logits& l) {
  require_reference(l, g.num_nodes());
  const int y = l.y_ref[t];
  if (k == y) return 0.0;
  return ppr_row(g, ctx, t).dot(class_reward(l, y, k));
}

double margin(NodeId t, int k, const Graph& g, const PPRContext& ctx, const Logits& l) {
  return margin(t, k, Digraph::from(g), ctx, l);
}

WorstCase worst_case_margin(NodeId t, int k, const Graph& g, const PPRContext& ctx,
                            const Logits& l, const PerturbationScenario& sc,
                            const ImmuneMask& mask, const PerturbationDelta* warm) {
  require_reference(l, g.num_nodes());
  const int y = l.y_ref[t];
  if (k == y) throw std::invalid_argument("worst_case_margin: k equals the reference class");
  detail::AttackProblem prob{g, ctx, class_reward(l, y, k), {t}, sc.local_budget.budgets(g), mask,
                             sc.edge_mode, kMaxPolicySweeps};
  auto sol = detail::solve_attack(prob, warm);
  WorstCase out;
  out.margin = (1.0 - ctx.alpha) * sol.values[t];
  out.delta = std::move(sol.delta);
  out.converged = sol.converged;
  out.sweeps = sol.sweeps;
  out.objective_trace = std::move(sol.trace);
  return out;
}

ClassWorstCase worst_margin_all_classes(NodeId t, const Graph& g, const PPRContext& ctx,
                                        const Logits& l, const PerturbationScenario& sc,
                                        const ImmuneMask& mask) {
  require_reference(l, g.num_nodes());
  ClassWorstCase best;
  best.margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < l.num_classes(); ++k) {
    if (k == l.y_ref[t]) continue;
    auto wc = worst_case_margin(t, k, g, ctx, l, sc, mask);
    if (wc.margin < best.margin) {
      best.margin = wc.margin;
      best.worst_class = k;
      best.delta = std::move(wc.delta);
      best.converged = wc.converged;
    }
  }
  return best;
}

std::size_t CertificationResult::robust_count() const {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](const auto& c) { return c.robust; }));
}

double CertificationResult::total_margin() const {
  double s = 0.0;
  for (const auto& c : targets) s += c.worst_margin;
  return s;
}

const TargetCertificate* CertificationResult::find(NodeId t) const {
  auto it = std::lower_bound(targets.begin(), targets.end(), t,
                             [](const TargetCertificate& c, NodeId v) { return c.node < v; });
  return it != targets.end() && it->node == t ? &*it : nullptr;
}

bool CertificationResult::all_converged() const {
  return std::all_of(targets.begin(), targets.end(), [](const auto& c) { return c.converged; });
}

std::vector<NodeId> all_nodes(NodeId n) {
  std::vector<NodeId> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

namespace {

struct Group {
  int cls;
  int other;
  std::vector<NodeId> members;
};

CertificationResult certify_policy_iteration(std::span<const NodeId> targets, const Graph& g,
                                             const PPRContext& ctx, const Logits& l,
                                             const PerturbationScenario& sc,
                                             const ImmuneMask& mask, const CertifyOptions& opts,
                                             const CertificationResult* warm) {
  const int num_classes = l.num_classes();
  const auto budgets = sc.local_budget.budgets(g);
  const bool split_targets = opts.per_target && sc.edge_mode == EdgeMode::kUndirectedPair;

  std::vector<Group> groups;
  if (split_targets) {
    for (NodeId t : targets) {
      for (int k = 0; k < num_classes; ++k) {
        if (k != l.y_ref[t]) groups.push_back({l.y_ref[t], k, {t}});
      }
    }
  } else {
    std::map<int, std::vector<NodeId>> by_class;
    for (NodeId t : targets) by_class[l.y_ref[t]].push_back(t);
    for (auto& [c, members] : by_class) {
      for (int k = 0; k < num_classes; ++k) {
        if (k != c) groups.push_back({c, k, members});
      }
    }
  }

  struct Solved {
    std::shared_ptr<const PerturbationDelta> delta;
    Eigen::VectorXd values;
    bool converged;
  };
  std::vector<Solved> solved(groups.size());
  parallel_for(static_cast<std::int64_t>(groups.size()), opts.exec, [&](std::int64_t gi) {
    const Group& grp = groups[gi];
    const PerturbationDelta* start = nullptr;
    if (warm != nullptr) {
      if (split_targets) {
        const auto* prev = warm->find(grp.members.front());
        if (prev != nullptr && grp.other < static_cast<int>(prev->class_deltas.size())) {
          start = prev->class_deltas[grp.other].get();
        }
      } else if (auto it = warm->group_deltas.find({grp.cls, grp.other});
                 it != warm->group_deltas.end()) {
        start = it->second.get();
      }
    }
    detail::AttackProblem prob{g, ctx, class_reward(l, grp.cls, grp.other), grp.members, budgets,
                               mask, sc.edge_mode, opts.max_sweeps};
    auto sol = detail::solve_attack(prob, start);
    solved[gi] = {std::make_shared<const PerturbationDelta>(std::move(sol.delta)),
                  std::move(sol.values), sol.converged};
  });

  // A symmetric group delta minimizes the summed margin, so single members can end up above
  // their clean margin. Those members fall back to the empty perturbation.
  const bool clamp_clean = !split_targets && sc.edge_mode == EdgeMode::kUndirectedPair;
  std::vector<Eigen::VectorXd> clean(clamp_clean ? groups.size() : 0);
  if (clamp_clean) {
    parallel_for(static_cast<std::int64_t>(groups.size()), opts.exec, [&](std::int64_t gi) {
      clean[gi] = value_vector(g, ctx, class_reward(l, groups[gi].cls, groups[gi].other));
    });
  }
  const auto empty = std::make_shared<const PerturbationDelta>(PerturbationDelta(sc.edge_mode, {}));

  CertificationResult out;
  std::map<NodeId, TargetCertificate> per_target;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& grp = groups[gi];
    if (!split_targets) out.group_deltas[{grp.cls, grp.other}] = solved[gi].delta;
    for (NodeId t : grp.members) {
      double value = solved[gi].values[t];
      std::shared_ptr<const PerturbationDelta> delta = solved[gi].delta;
      if (clamp_clean && clean[gi][t] < value) {
        value = clean[gi][t];
        delta = empty;
      }
      const double m = (1.0 - ctx.alpha) * value;
      auto [it, inserted] = per_target.try_emplace(t);
      TargetCertificate& cert = it->second;
      if (inserted) cert.class_deltas.resize(num_classes);
      cert.class_deltas[grp.other] = delta;
      // Groups are visited in increasing class order, so strict < keeps the smallest k on ties.
      if (inserted || m < cert.worst_margin) {
        cert.node = t;
        cert.worst_margin = m;
        cert.worst_class = grp.other;
        cert.worst_delta = delta;
        cert.converged = solved[gi].converged;
      }
    }
  }
  for (auto& [t, cert] : per_target) {
    cert.robust = cert.worst_margin > 0.0;
    out.targets.push_back(std::move(cert));
  }
  return out;
}

}  // namespace

CertificationResult certify_graph(std::span<const NodeId> targets, const Graph& g,
                                  const PPRContext& ctx, const Logits& l,
                                  const PerturbationScenario& sc, const ImmuneMask& mask,
                                  const CertifyOptions& opts, const CertificationResult* warm) {
  require_reference(l, g.num_nodes());
  for (NodeId t : targets) {
    if (t < 0 || t >= g.num_nodes()) throw std::out_of_range("certify_graph: target outside graph");
  }
  std::vector<NodeId> sorted(targets.begin(), targets.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (opts.kind == CertifierKind::kBruteForce) {
    return detail::certify_brute_force(sorted, g, ctx, l, sc, mask, opts.exec);
  }
  return certify_policy_iteration(sorted, g, ctx, l, sc, mask, opts, warm);
}

}  // namespace advimmune

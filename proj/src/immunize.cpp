#include "advimmune/immunize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <stdexcept>
#include <tuple>

namespace advimmune {

double total_worst_margin(std::span<const NodeId> targets, const Graph& g, const PPRContext& ctx,
                          const Logits& l, const PerturbationScenario& sc, const ImmuneMask& mask,
                          const CertifyOptions& opts) {
  return certify_graph(targets, g, ctx, l, sc, mask, opts).total_margin();
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::kCompleted: return "completed";
    case RunStatus::kExhausted: return "exhausted";
    case RunStatus::kSaturated: return "saturated";
  }
  return "unknown";
}

namespace {

std::size_t cache_capacity(NodeId n) {
  const double bytes_per_entry = 8.0 * static_cast<double>(n) * n + 1.0;
  return static_cast<std::size_t>(std::clamp(2e8 / bytes_per_entry, 4.0, 256.0));
}

bool saturated(const CertificationResult& cert) {
  return std::all_of(cert.targets.begin(), cert.targets.end(),
                     [](const TargetCertificate& c) { return !c.worst_delta || c.worst_delta->empty(); });
}

}  // namespace

MaskedAttack masked_worst_classes(const CertificationResult& cert, const Graph& g,
                                  const ImmuneMask& mask, const PPRContext& ctx, const Logits& l,
                                  Exec exec, ResolventCache* cache) {
  using Key = std::tuple<const PerturbationDelta*, int, int>;
  std::map<Key, std::size_t> index;
  std::vector<Key> keys;
  for (const auto& c : cert.targets) {
    const int y = l.y_ref.at(c.node);
    for (int k = 0; k < static_cast<int>(c.class_deltas.size()); ++k) {
      if (k == y) continue;
      Key key{c.class_deltas[k].get(), y, k};
      if (index.try_emplace(key, keys.size()).second) keys.push_back(key);
    }
  }

  std::vector<std::shared_ptr<const PerturbationDelta>> masked(keys.size());
  std::vector<Eigen::VectorXd> values(keys.size());
  parallel_for(static_cast<std::int64_t>(keys.size()), exec, [&](std::int64_t i) {
    const auto [delta, y, k] = keys[i];
    masked[i] = std::make_shared<const PerturbationDelta>(
        delta != nullptr ? apply_mask(*delta, mask) : PerturbationDelta{});
    const Digraph perturbed = perturb(g, *masked[i]);
    auto res = cache != nullptr ? cache->get(perturbed, ctx)
                                : std::make_shared<const Resolvent>(perturbed, ctx);
    values[i] = res->solve(l.h.col(y) - l.h.col(k));
  });

  MaskedAttack out;
  for (const auto& c : cert.targets) {
    const int y = l.y_ref[c.node];
    TargetAttack best{c.node, -1, nullptr};
    double best_margin = 0.0;
    for (int k = 0; k < static_cast<int>(c.class_deltas.size()); ++k) {
      if (k == y) continue;
      const std::size_t i = index.at(Key{c.class_deltas[k].get(), y, k});
      const double m = (1.0 - ctx.alpha) * values[i][c.node];
      if (best.worst_class < 0 || m < best_margin) {
        best = {c.node, k, masked[i]};
        best_margin = m;
      }
    }
    if (best.worst_class < 0) continue;
    out.attacks.push_back(std::move(best));
    out.margins.push_back(best_margin);
  }
  return out;
}

ImmunizationRun advimmune_edge(std::span<const NodeId> targets, const Graph& g,
                               const PPRContext& ctx, const Logits& l,
                               const PerturbationScenario& sc, std::size_t budget,
                               const ImmunizeOptions& opts) {
  ImmunizationRun run;
  run.budget = budget;
  auto certify = [&](const ImmuneMask& m) {
    ++run.attack_updates_performed;
    auto c = certify_graph(targets, g, ctx, l, sc, m, opts.certify);
    run.objective_trace.push_back(c.total_margin());
    return c;
  };

  CertificationResult cert = certify(run.mask);
  if (budget == 0) {
    run.final_certificate = std::move(cert);
    return run;
  }
  const int c = opts.attack_updates.value_or(static_cast<int>(std::min<std::size_t>(100, budget)));
  if (c < 1) throw std::invalid_argument("advimmune_edge: attack update count must be >= 1");
  run.attack_update_count = c;
  const std::size_t interval = (budget + c - 1) / c;

  ResolventCache cache(cache_capacity(g.num_nodes()));
  std::size_t since_update = 0;
  bool fresh = true;
  while (run.mask.edge_budget_used() < budget) {
    if (!fresh && since_update >= interval) {
      cert = certify(run.mask);
      since_update = 0;
      fresh = true;
    }
    const auto attack = masked_worst_classes(cert, g, run.mask, ctx, l, opts.certify.exec, &cache);
    const auto mg = meta_gradient_edge(g, attack.attacks, run.mask, ctx, l, opts.certify.exec, &cache);

    const NodePair* chosen = nullptr;
    double best_value = 0.0;
    for (const auto& [pair, grad] : mg.edge_grad) {
      if (chosen == nullptr || -grad > best_value) {
        chosen = &pair;
        best_value = -grad;
      }
    }
    if (chosen == nullptr) {
      if (!fresh) {
        cert = certify(run.mask);
        since_update = 0;
        fresh = true;
        continue;
      }
      run.status = saturated(cert) ? RunStatus::kSaturated : RunStatus::kExhausted;
      run.message = "stopped after " + std::to_string(run.mask.edge_budget_used()) +
                    " of " + std::to_string(budget) + " pairs: no attacked pair left to protect";
      break;
    }
    run.mask.protect_pair(chosen->first, chosen->second);
    ++since_update;
    fresh = false;
  }
  if (!fresh) cert = certify(run.mask);
  run.final_certificate = std::move(cert);
  return run;
}

double robustness_gain(NodeId j, const ImmuneMask& mask, const CertificationResult& current,
                       std::span<const NodeId> targets, const Graph& g, const PPRContext& ctx,
                       const Logits& l, const PerturbationScenario& sc,
                       const CertifyOptions& opts) {
  if (j < 0 || j >= g.num_nodes()) throw std::out_of_range("robustness_gain: node outside graph");
  if (mask.node_protected(j)) throw std::invalid_argument("robustness_gain: node already protected");
  ImmuneMask with_j = mask;
  with_j.protect_node(j);
  const auto cert = certify_graph(targets, g, ctx, l, sc, with_j, opts, &current);
  // Summing per-target differences keeps untouched targets at exactly zero.
  double gain = 0.0;
  for (const auto& c : cert.targets) {
    const auto* before = current.find(c.node);
    if (before == nullptr) throw std::invalid_argument("robustness_gain: target missing from current");
    gain += c.worst_margin - before->worst_margin;
  }
  return gain;
}

namespace {

struct Gain {
  double value;
  NodeId node;
};

// Rounds a gain onto a grid far below any meaningful difference so that gains equal up to
// summation order compare equal and fall through to the id tie rule.
double snap(double gain, double scale) {
  const double q = 1e-12 * scale;
  return std::round(gain / q) * q;
}

double margin_scale(const CertificationResult& cert) {
  double s = 1.0;
  for (const auto& c : cert.targets) s += std::abs(c.worst_margin);
  return s;
}

// Larger gain first, then smaller id.
bool ranks_before(const Gain& a, const Gain& b) {
  return a.value > b.value || (a.value == b.value && a.node < b.node);
}

}  // namespace

ImmunizationRun advimmune_node(std::span<const NodeId> targets, const Graph& g,
                               const PPRContext& ctx, const Logits& l,
                               const PerturbationScenario& sc, std::size_t budget,
                               const ImmunizeOptions& opts) {
  const NodeId n = g.num_nodes();
  ImmunizationRun run;
  run.budget = budget;
  auto certify = [&](const ImmuneMask& m) {
    ++run.attack_updates_performed;
    auto c = certify_graph(targets, g, ctx, l, sc, m, opts.certify);
    run.objective_trace.push_back(c.total_margin());
    return c;
  };

  CertificationResult cert = certify(run.mask);
  if (budget == 0) {
    run.final_certificate = std::move(cert);
    return run;
  }
  if (saturated(cert)) {
    run.status = RunStatus::kSaturated;
    run.message = "no effective attack on any target";
    run.final_certificate = std::move(cert);
    return run;
  }
  const int default_count = static_cast<int>(std::max<std::size_t>(4 * budget, 50));
  const int count = std::min<int>(opts.candidate_count.value_or(default_count), n);
  if (opts.candidate_count && static_cast<std::size_t>(*opts.candidate_count) < budget) {
    throw std::invalid_argument("advimmune_node: candidate count below budget");
  }

  ResolventCache cache(cache_capacity(n));
  const auto attack = masked_worst_classes(cert, g, run.mask, ctx, l, opts.certify.exec, &cache);
  const auto mg = meta_gradient_node(g, attack.attacks, run.mask, ctx, l, opts.certify.exec, &cache);
  std::vector<Gain> ranking;
  for (NodeId v = 0; v < n; ++v) ranking.push_back({mg.node_value(v), v});
  std::stable_sort(ranking.begin(), ranking.end(), ranks_before);
  for (int i = 0; i < count; ++i) run.candidates.push_back(ranking[i].node);

  const double scale = margin_scale(cert);
  auto gains_of = [&](std::span<const NodeId> nodes) {
    std::vector<double> out(nodes.size());
    parallel_for(static_cast<std::int64_t>(nodes.size()), opts.certify.exec, [&](std::int64_t i) {
      out[i] = snap(robustness_gain(nodes[i], run.mask, cert, targets, g, ctx, l, sc, opts.certify),
                    scale);
    });
    return out;
  };
  run.initial_gains = gains_of(run.candidates);

  auto select = [&](NodeId v, int updates) {
    run.mask.protect_node(v);
    run.gain_updates.push_back(updates);
    cert = certify(run.mask);
    return saturated(cert);
  };

  bool stopped_saturated = false;
  if (opts.lazy) {
    auto worse = [](const Gain& a, const Gain& b) { return ranks_before(b, a); };
    std::priority_queue<Gain, std::vector<Gain>, decltype(worse)> heap(worse);
    for (std::size_t i = 0; i < run.candidates.size(); ++i) {
      heap.push({run.initial_gains[i], run.candidates[i]});
    }
    while (run.mask.node_budget_used() < budget && !heap.empty()) {
      int updates = 0;
      for (;;) {
        Gain top = heap.top();
        heap.pop();
        top.value = snap(robustness_gain(top.node, run.mask, cert, targets, g, ctx, l, sc, opts.certify),
                         scale);
        ++updates;
        if (heap.empty() || !ranks_before(heap.top(), top)) {
          stopped_saturated = select(top.node, updates);
          break;
        }
        heap.push(top);
      }
      if (stopped_saturated) break;
    }
  } else {
    std::vector<NodeId> remaining = run.candidates;
    std::sort(remaining.begin(), remaining.end());
    while (run.mask.node_budget_used() < budget && !remaining.empty()) {
      const auto gains = gains_of(remaining);
      std::size_t best = 0;
      for (std::size_t i = 1; i < remaining.size(); ++i) {
        if (ranks_before({gains[i], remaining[i]}, {gains[best], remaining[best]})) best = i;
      }
      const NodeId v = remaining[best];
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
      stopped_saturated = select(v, static_cast<int>(gains.size()));
      if (stopped_saturated) break;
    }
  }

  if (run.mask.node_budget_used() < budget) {
    run.status = stopped_saturated ? RunStatus::kSaturated : RunStatus::kExhausted;
    run.message = "stopped after " + std::to_string(run.mask.node_budget_used()) + " of " +
                  std::to_string(budget) + " nodes";
  }
  run.final_certificate = std::move(cert);
  return run;
}

}  // namespace advimmune

// Exhaustive worst-case search used as the test oracle for policy iteration.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "advimmune/certify.hpp"
#include "policy_iteration.hpp"

namespace advimmune {

std::vector<Flip> admissible_flips(const Graph& g, const PerturbationScenario& sc,
                                   const ImmuneMask& mask) {
  const auto b = sc.local_budget.budgets(g);
  const NodeId n = g.num_nodes();
  std::vector<Flip> out;
  for (NodeId i = 0; i < n; ++i) {
    if (b[i] <= 0) continue;
    for (NodeId j = 0; j < n; ++j) {
      if (j == i || mask.is_protected(i, j)) continue;
      if (sc.edge_mode == EdgeMode::kUndirectedPair && (j < i || b[j] <= 0)) continue;
      out.push_back({i, j, g.has_edge(i, j) ? -1 : 1});
    }
  }
  return out;
}

namespace {

// Independent dense evaluation of (I - alpha P)^-1 for one flip subset.
Eigen::MatrixXd dense_resolvent(const Graph& g, double alpha, EdgeMode mode,
                                std::span<const Flip> flips) {
  const NodeId n = g.num_nodes();
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
  for (auto [u, v] : g.edges()) adj(u, v) = adj(v, u) = 1.0;
  for (const auto& f : flips) {
    adj(f.from, f.to) += f.sign;
    if (mode == EdgeMode::kUndirectedPair) adj(f.to, f.from) += f.sign;
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (NodeId i = 0; i < n; ++i) {
    const double d = adj.row(i).sum();
    if (d == 0.0) {
      m(i, i) -= alpha;
    } else {
      m.row(i) -= (alpha / d) * adj.row(i);
    }
  }
  return m.fullPivLu().inverse();
}

// Calls visit(subset) for every budget-feasible subset, empty set first,
// restricted to subsets whose membership of flips[0..prefix_len) matches prefix_bits.
template <class Visit>
void enumerate_subsets(const std::vector<Flip>& flips, const std::vector<int>& budgets,
                       std::optional<int> global, EdgeMode mode, std::size_t prefix_len,
                       std::uint64_t prefix_bits, Visit&& visit) {
  std::vector<int> used(budgets.size(), 0);
  std::vector<Flip> chosen;
  auto fits = [&](const Flip& f) {
    if (global && static_cast<int>(chosen.size()) >= *global) return false;
    if (used[f.from] >= budgets[f.from]) return false;
    return mode != EdgeMode::kUndirectedPair || used[f.to] < budgets[f.to];
  };
  auto take = [&](const Flip& f, int s) {
    used[f.from] += s;
    if (mode == EdgeMode::kUndirectedPair) used[f.to] += s;
  };
  for (std::size_t q = 0; q < prefix_len; ++q) {
    if ((prefix_bits >> (prefix_len - 1 - q)) & 1u) {
      if (!fits(flips[q])) return;
      take(flips[q], 1);
      chosen.push_back(flips[q]);
    }
  }
  auto rec = [&](auto&& self, std::size_t idx) -> void {
    if (idx == flips.size()) {
      visit(std::span<const Flip>(chosen));
      return;
    }
    self(self, idx + 1);
    if (fits(flips[idx])) {
      take(flips[idx], 1);
      chosen.push_back(flips[idx]);
      self(self, idx + 1);
      chosen.pop_back();
      take(flips[idx], -1);
    }
  };
  rec(rec, prefix_len);
}

std::vector<Flip> enumerable_flips(const Graph& g, const PerturbationScenario& sc,
                                   const ImmuneMask& mask) {
  auto flips = admissible_flips(g, sc, mask);
  if (flips.size() > kMaxEnumerablePairs) {
    throw std::length_error("brute force needs <= " + std::to_string(kMaxEnumerablePairs) +
                            " admissible pairs, got " + std::to_string(flips.size()));
  }
  return flips;
}

struct Best {
  double margin = std::numeric_limits<double>::infinity();
  std::vector<Flip> flips;
};

}  // namespace

WorstCase brute_force_worst_margin(NodeId t, int k, const Graph& g, const PPRContext& ctx,
                                   const Logits& l, const PerturbationScenario& sc,
                                   const ImmuneMask& mask) {
  l.validate(g.num_nodes());
  if (l.y_ref.empty()) throw std::invalid_argument("logits carry no reference classes");
  const int y = l.y_ref[t];
  if (k == y) throw std::invalid_argument("brute_force_worst_margin: k equals the reference class");
  const auto flips = enumerable_flips(g, sc, mask);
  const Eigen::VectorXd r = l.h.col(y) - l.h.col(k);
  Best best;
  enumerate_subsets(flips, sc.local_budget.budgets(g), sc.global_budget, sc.edge_mode, 0, 0,
                    [&](std::span<const Flip> subset) {
                      Eigen::MatrixXd q = dense_resolvent(g, ctx.alpha, sc.edge_mode, subset);
                      const double m = (1.0 - ctx.alpha) * q.row(t).dot(r);
                      if (m < best.margin) {
                        best.margin = m;
                        best.flips.assign(subset.begin(), subset.end());
                      }
                    });
  WorstCase out;
  out.margin = best.margin;
  out.delta = PerturbationDelta(sc.edge_mode, std::move(best.flips));
  return out;
}

ClassWorstCase brute_force_all_classes(NodeId t, const Graph& g, const PPRContext& ctx,
                                       const Logits& l, const PerturbationScenario& sc,
                                       const ImmuneMask& mask) {
  ClassWorstCase best;
  best.margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < l.num_classes(); ++k) {
    if (k == l.y_ref[t]) continue;
    auto wc = brute_force_worst_margin(t, k, g, ctx, l, sc, mask);
    if (wc.margin < best.margin) {
      best.margin = wc.margin;
      best.worst_class = k;
      best.delta = std::move(wc.delta);
    }
  }
  return best;
}

namespace detail {

CertificationResult certify_brute_force(std::span<const NodeId> targets, const Graph& g,
                                        const PPRContext& ctx, const Logits& l,
                                        const PerturbationScenario& sc, const ImmuneMask& mask,
                                        Exec exec) {
  const auto flips = enumerable_flips(g, sc, mask);
  const auto budgets = sc.local_budget.budgets(g);
  const int num_classes = l.num_classes();
  const std::size_t nt = targets.size();

  // Split the enumeration tree on the first few flips; subtrees are merged in
  // enumeration order so ties resolve exactly as in a serial scan.
  const std::size_t prefix_len = std::min<std::size_t>(flips.size(), 6);
  const std::size_t num_parts = std::size_t{1} << prefix_len;
  std::vector<std::vector<Best>> parts(num_parts, std::vector<Best>(nt * num_classes));
  parallel_for(static_cast<std::int64_t>(num_parts), exec, [&](std::int64_t part) {
    auto& best = parts[part];
    enumerate_subsets(flips, budgets, sc.global_budget, sc.edge_mode, prefix_len,
                      static_cast<std::uint64_t>(part), [&](std::span<const Flip> subset) {
                        Eigen::MatrixXd q = dense_resolvent(g, ctx.alpha, sc.edge_mode, subset);
                        for (std::size_t ti = 0; ti < nt; ++ti) {
                          const NodeId t = targets[ti];
                          const int y = l.y_ref[t];
                          for (int k = 0; k < num_classes; ++k) {
                            if (k == y) continue;
                            const double m =
                                (1.0 - ctx.alpha) * q.row(t).dot(l.h.col(y) - l.h.col(k));
                            auto& slot = best[ti * num_classes + k];
                            if (m < slot.margin) {
                              slot.margin = m;
                              slot.flips.assign(subset.begin(), subset.end());
                            }
                          }
                        }
                      });
  });

  // Parts are ordered by prefix bits with "exclude" first, matching the serial order.
  CertificationResult out;
  for (std::size_t ti = 0; ti < nt; ++ti) {
    const NodeId t = targets[ti];
    TargetCertificate cert;
    cert.node = t;
    cert.worst_margin = std::numeric_limits<double>::infinity();
    cert.class_deltas.resize(num_classes);
    for (int k = 0; k < num_classes; ++k) {
      if (k == l.y_ref[t]) continue;
      const Best* slot = nullptr;
      for (std::size_t part = 0; part < num_parts; ++part) {
        const Best& cand = parts[part][ti * num_classes + k];
        if (slot == nullptr || cand.margin < slot->margin) slot = &cand;
      }
      cert.class_deltas[k] = std::make_shared<const PerturbationDelta>(sc.edge_mode, slot->flips);
      if (slot->margin < cert.worst_margin) {
        cert.worst_margin = slot->margin;
        cert.worst_class = k;
        cert.worst_delta = cert.class_deltas[k];
      }
    }
    cert.robust = cert.worst_margin > 0.0;
    out.targets.push_back(std::move(cert));
  }
  return out;
}

}  // namespace detail
}  // namespace advimmune

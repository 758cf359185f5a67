#include "policy_iteration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>

namespace advimmune::detail {
namespace {

struct Candidate {
  NodeId j;
  bool removal;
  double partner;  // first-order cost the flip induces on the partner's row
};

struct RowChoice {
  std::vector<Candidate> chosen;
  double cost = std::numeric_limits<double>::infinity();
};

// Cost of one row configuration: weight * (neighbour mean of v) + partner terms.
// An emptied row redirects to itself.
double row_cost(NodeId i, std::span<const NodeId> clean, const Eigen::VectorXd& v, double weight,
                std::span<const Candidate> chosen) {
  double sum = 0.0;
  for (NodeId j : clean) sum += v[j];
  int deg = static_cast<int>(clean.size());
  double partner = 0.0;
  for (const auto& c : chosen) {
    sum += c.removal ? -v[c.j] : v[c.j];
    deg += c.removal ? -1 : 1;
    partner += c.partner;
  }
  const double mean = deg > 0 ? sum / deg : v[i];
  return weight * mean + partner;
}

// Exact minimizer of row_cost over flip sets of size <= budget. For a fixed
// resulting degree the cost is additive, so the best `a` removals and `c`
// additions are the smallest keys; every admissible degree is scanned.
RowChoice best_row(NodeId i, std::span<const NodeId> clean, const Eigen::VectorXd& v, double weight,
                   std::span<const Candidate> cands, int budget) {
  std::vector<Candidate> rem, add;
  for (const auto& c : cands) (c.removal ? rem : add).push_back(c);
  const int d = static_cast<int>(clean.size());
  double base = 0.0;
  for (NodeId j : clean) base += v[j];
  const int amax = std::min<int>(budget, static_cast<int>(rem.size()));
  const int cmax = std::min<int>(budget, static_cast<int>(add.size()));

  RowChoice best;
  // Doing nothing.
  best.cost = row_cost(i, clean, v, weight, {});

  auto consider = [&](double cost, std::vector<Candidate>&& chosen) {
    if (cost < best.cost) {
      best.cost = cost;
      best.chosen = std::move(chosen);
    }
  };

  std::vector<double> rem_keys(rem.size()), add_keys(add.size());
  std::vector<std::size_t> rem_order(rem.size()), add_order(add.size());
  for (int dp = std::max(d - amax, 0); dp <= d + cmax; ++dp) {
    if (dp == 0) {
      // Only reachable by removing every neighbour.
      if (static_cast<int>(rem.size()) == d && d <= budget) {
        double cost = weight * v[i];
        for (const auto& c : rem) cost += c.partner;
        consider(cost, std::vector<Candidate>(rem));
      }
      continue;
    }
    const double scale = weight / dp;
    for (std::size_t r = 0; r < rem.size(); ++r) rem_keys[r] = -scale * v[rem[r].j] + rem[r].partner;
    for (std::size_t r = 0; r < add.size(); ++r) add_keys[r] = scale * v[add[r].j] + add[r].partner;
    auto by_key = [](const std::vector<double>& keys, const std::vector<Candidate>& cs) {
      return [&keys, &cs](std::size_t a, std::size_t b) {
        return keys[a] < keys[b] || (keys[a] == keys[b] && cs[a].j < cs[b].j);
      };
    };
    std::iota(rem_order.begin(), rem_order.end(), std::size_t{0});
    std::iota(add_order.begin(), add_order.end(), std::size_t{0});
    std::sort(rem_order.begin(), rem_order.end(), by_key(rem_keys, rem));
    std::sort(add_order.begin(), add_order.end(), by_key(add_keys, add));

    double rem_prefix = 0.0;
    for (int a = 0; a <= amax; ++a) {
      if (a > 0) rem_prefix += rem_keys[rem_order[a - 1]];
      const int c = dp - d + a;
      if (c < 0) continue;
      if (c > cmax || a + c > budget) break;
      if (a == 0 && c == 0) continue;
      double add_prefix = 0.0;
      for (int q = 0; q < c; ++q) add_prefix += add_keys[add_order[q]];
      const double cost = scale * base + rem_prefix + add_prefix;
      if (cost < best.cost) {
        std::vector<Candidate> chosen;
        chosen.reserve(a + c);
        for (int q = 0; q < a; ++q) chosen.push_back(rem[rem_order[q]]);
        for (int q = 0; q < c; ++q) chosen.push_back(add[add_order[q]]);
        consider(cost, std::move(chosen));
      }
    }
  }
  return best;
}

bool meaningfully_less(double a, double b) { return a < b - 1e-12 * (1.0 + std::abs(b)); }

// Flip sets per row. In undirected mode a pair {i, j} is listed in both rows.
using Policy = std::vector<std::vector<Flip>>;

Digraph build_perturbed(const Graph& g, const Policy& policy) {
  std::vector<std::vector<NodeId>> rows(g.num_nodes());
  for (NodeId i = 0; i < g.num_nodes(); ++i) {
    auto nb = g.neighbors(i);
    rows[i].assign(nb.begin(), nb.end());
    for (const auto& f : policy[i]) {
      if (f.sign > 0) {
        rows[i].push_back(f.to);
      } else {
        std::erase(rows[i], f.to);
      }
    }
  }
  return Digraph(std::move(rows));
}

PerturbationDelta to_delta(const Policy& policy, EdgeMode mode) {
  std::vector<Flip> flips;
  for (const auto& row : policy) {
    for (const auto& f : row) {
      if (mode == EdgeMode::kDirectedFragile || f.from < f.to) flips.push_back(f);
    }
  }
  return PerturbationDelta(mode, std::move(flips));
}

Policy sanitize_warm(const AttackProblem& p, const PerturbationDelta* warm) {
  const NodeId n = p.g.num_nodes();
  Policy policy(n);
  if (warm == nullptr || warm->mode() != p.mode) return policy;
  std::vector<int> used(n, 0);
  for (const auto& f : warm->flips()) {
    if (f.from < 0 || f.to < 0 || f.from >= n || f.to >= n) continue;
    if (p.mask.is_protected(f.from, f.to)) continue;
    if ((f.sign > 0) == p.g.has_edge(f.from, f.to)) continue;
    if (used[f.from] >= p.budgets[f.from]) continue;
    if (p.mode == EdgeMode::kUndirectedPair) {
      if (used[f.to] >= p.budgets[f.to]) continue;
      ++used[f.to];
      policy[f.to].push_back({f.to, f.from, f.sign});
    }
    ++used[f.from];
    policy[f.from].push_back(f);
  }
  return policy;
}

struct Evaluation {
  Eigen::VectorXd values;
  Eigen::VectorXd weights;  // influence of each row on the objective
  double objective = 0.0;
};

Evaluation evaluate(const AttackProblem& p, const Policy& policy, bool need_weights) {
  Resolvent res(build_perturbed(p.g, policy), p.ctx);
  Evaluation ev;
  ev.values = res.solve(p.reward);
  for (NodeId t : p.targets) ev.objective += ev.values[t];
  if (need_weights) {
    Eigen::VectorXd indicator = Eigen::VectorXd::Zero(p.g.num_nodes());
    for (NodeId t : p.targets) indicator[t] += 1.0;
    ev.weights = res.solve_transposed(indicator);
  }
  return ev;
}

std::vector<Candidate> to_candidates(const std::vector<Flip>& flips) {
  std::vector<Candidate> out;
  out.reserve(flips.size());
  for (const auto& f : flips) out.push_back({f.to, f.sign < 0, 0.0});
  return out;
}

// Howard improvement: every row re-optimized against the same values.
bool improve_directed(const AttackProblem& p, const Evaluation& ev, Policy& policy) {
  const NodeId n = p.g.num_nodes();
  bool changed = false;
  std::vector<Candidate> cands;
  for (NodeId i = 0; i < n; ++i) {
    if (p.budgets[i] <= 0) continue;
    cands.clear();
    for (NodeId j = 0; j < n; ++j) {
      if (j == i || p.mask.is_protected(i, j)) continue;
      cands.push_back({j, p.g.has_edge(i, j), 0.0});
    }
    auto clean = p.g.neighbors(i);
    const auto current = to_candidates(policy[i]);
    const double cur_cost = row_cost(i, clean, ev.values, 1.0, current);
    auto best = best_row(i, clean, ev.values, 1.0, cands, p.budgets[i]);
    if (!meaningfully_less(best.cost, cur_cost)) continue;
    std::vector<Flip> row;
    for (const auto& c : best.chosen) row.push_back({i, c.j, c.removal ? -1 : 1});
    std::sort(row.begin(), row.end());
    if (row != policy[i]) {
      policy[i] = std::move(row);
      changed = true;
    }
  }
  return changed;
}

// Gauss-Seidel improvement over symmetric flips. Each row's choice is scored
// by its own first-order effect plus the effect on every partner row.
bool improve_undirected(const AttackProblem& p, const Evaluation& ev, Policy& policy) {
  const NodeId n = p.g.num_nodes();
  const auto& v = ev.values;
  const auto& w = ev.weights;
  std::vector<int> used(n, 0);
  std::vector<int> deg(n);
  std::vector<double> sum(n, 0.0);
  for (NodeId i = 0; i < n; ++i) {
    used[i] = static_cast<int>(policy[i].size());
    deg[i] = p.g.degree(i);
    for (NodeId j : p.g.neighbors(i)) sum[i] += v[j];
    for (const auto& f : policy[i]) {
      deg[i] += f.sign;
      sum[i] += f.sign * v[f.to];
    }
  }
  auto mean = [&](NodeId j, int d, double s) { return d > 0 ? s / d : v[j]; };
  // Toggle i in row j (sign +1 adds i to j's row).
  auto toggle = [&](NodeId j, NodeId i, int sign) {
    deg[j] += sign;
    sum[j] += sign * v[i];
  };
  auto partner_cost = [&](NodeId j, NodeId i, int sign) {
    return w[j] * (mean(j, deg[j] + sign, sum[j] + sign * v[i]) - mean(j, deg[j], sum[j]));
  };

  bool changed = false;
  std::vector<Candidate> cands;
  for (NodeId i = 0; i < n; ++i) {
    if (p.budgets[i] <= 0) continue;
    // Release row i's flips, restoring partner rows.
    std::vector<Flip> current = policy[i];
    for (const auto& f : current) {
      auto& other = policy[f.to];
      std::erase_if(other, [i](const Flip& g) { return g.to == i; });
      --used[f.to];
      toggle(f.to, i, -f.sign);
      toggle(i, f.to, -f.sign);
    }
    policy[i].clear();
    used[i] = 0;

    cands.clear();
    std::vector<Candidate> current_cands;
    for (NodeId j = 0; j < n; ++j) {
      if (j == i || p.budgets[j] <= 0 || p.mask.is_protected(i, j)) continue;
      const bool removal = p.g.has_edge(i, j);
      const int sign = removal ? -1 : 1;
      Candidate c{j, removal, partner_cost(j, i, sign)};
      if (std::any_of(current.begin(), current.end(), [j](const Flip& f) { return f.to == j; })) {
        current_cands.push_back(c);
      }
      if (used[j] < p.budgets[j]) cands.push_back(c);
    }
    auto clean = p.g.neighbors(i);
    const double cur_cost = row_cost(i, clean, v, w[i], current_cands);
    auto best = best_row(i, clean, v, w[i], cands, p.budgets[i]);

    std::vector<Flip> row;
    if (meaningfully_less(best.cost, cur_cost)) {
      for (const auto& c : best.chosen) row.push_back({i, c.j, c.removal ? -1 : 1});
    } else {
      row = current;
    }
    std::sort(row.begin(), row.end());
    std::vector<Flip> before = current;
    std::sort(before.begin(), before.end());
    if (row != before) changed = true;
    for (const auto& f : row) {
      policy[f.to].push_back({f.to, i, f.sign});
      ++used[f.to];
      toggle(f.to, i, f.sign);
      toggle(i, f.to, f.sign);
    }
    used[i] = static_cast<int>(row.size());
    policy[i] = std::move(row);
  }
  for (auto& row : policy) std::sort(row.begin(), row.end());
  return changed;
}


// Exact descent over single-pair moves for undirected mode. A move rewrites at
// most three rows; its effect on the objective follows from the Woodbury
// identity against the explicit resolvent, which is updated in place when the
// move is taken.
class PairMoveRefiner {
 public:
  PairMoveRefiner(const AttackProblem& p, const Policy& policy) : p_(&p) {
    const NodeId n = p.g.num_nodes();
    rows_.resize(n);
    used_.assign(n, 0);
    in_delta_.assign(static_cast<std::size_t>(n) * n, 0);
    for (NodeId i = 0; i < n; ++i) {
      auto nb = p.g.neighbors(i);
      rows_[i].assign(nb.begin(), nb.end());
    }
    for (NodeId i = 0; i < n; ++i) {
      for (const auto& f : policy[i]) {
        toggle_row(i, f.to);
        ++used_[i];
        in_delta_[index(i, f.to)] = 1;
      }
    }
    Resolvent res(Digraph(rows_), p.ctx);
    q_ = res.inverse();
    indicator_ = Eigen::VectorXd::Zero(n);
    for (NodeId t : p.targets) indicator_[t] += 1.0;
    refresh_vectors();
  }

  // Applies improving moves until none is left or `max_moves` were taken.
  void run(int max_moves) {
    for (int step = 0; step < max_moves; ++step) {
      if (!take_best_move()) return;
    }
  }

  // Forces the pair {a, b} in or out regardless of the objective. Returns false when the
  // toggle is inadmissible or would exceed a budget.
  bool force(NodeId a, NodeId b) {
    if (!admissible_pair(a, b)) return false;
    const bool active = in_delta_[index(a, b)];
    if (!active && (used_[a] >= p_->budgets[a] || used_[b] >= p_->budgets[b])) return false;
    std::vector<RowEdit> edits{{a, {b}}, {b, {a}}};
    apply(edits, effect(edits));
    set_pair(a, b, !active);
    return true;
  }

  double objective() const { return indicator_.dot(v_); }

  Policy policy() const {
    const NodeId n = p_->g.num_nodes();
    Policy out(n);
    for (NodeId i = 0; i < n; ++i) {
      for (NodeId j = 0; j < n; ++j) {
        if (in_delta_[index(i, j)]) out[i].push_back({i, j, p_->g.has_edge(i, j) ? -1 : 1});
      }
    }
    return out;
  }

 private:
  struct RowEdit {
    NodeId row;
    std::vector<NodeId> toggled;  // neighbours entering or leaving the row
  };

  std::size_t index(NodeId a, NodeId b) const {
    return static_cast<std::size_t>(a) * p_->g.num_nodes() + b;
  }

  void toggle_row(NodeId i, NodeId j) {
    auto& row = rows_[i];
    auto it = std::lower_bound(row.begin(), row.end(), j);
    if (it != row.end() && *it == j) {
      row.erase(it);
    } else {
      row.insert(it, j);
    }
  }

  void refresh_vectors() {
    v_ = q_ * p_->reward;
    w_ = q_.transpose() * indicator_;
  }

  // Sparse change of one transition row as (column, delta) entries.
  std::vector<std::pair<NodeId, double>> row_change(const RowEdit& e) const {
    const auto& old_row = rows_[e.row];
    std::vector<NodeId> new_row = old_row;
    for (NodeId j : e.toggled) {
      auto it = std::lower_bound(new_row.begin(), new_row.end(), j);
      if (it != new_row.end() && *it == j) {
        new_row.erase(it);
      } else {
        new_row.insert(it, j);
      }
    }
    std::vector<std::pair<NodeId, double>> out;
    auto add = [&out](NodeId c, double x) {
      for (auto& [col, val] : out) {
        if (col == c) {
          val += x;
          return;
        }
      }
      out.emplace_back(c, x);
    };
    if (old_row.empty()) {
      add(e.row, -1.0);
    } else {
      for (NodeId j : old_row) add(j, -1.0 / old_row.size());
    }
    if (new_row.empty()) {
      add(e.row, 1.0);
    } else {
      for (NodeId j : new_row) add(j, 1.0 / new_row.size());
    }
    return out;
  }

  struct MoveEffect {
    double delta_objective;
    Eigen::MatrixXd b;                                   // I - V Q U
    std::vector<std::vector<std::pair<NodeId, double>>> changes;
  };

  MoveEffect effect(const std::vector<RowEdit>& edits) const {
    const auto m = static_cast<Eigen::Index>(edits.size());
    MoveEffect out;
    out.changes.reserve(edits.size());
    for (const auto& e : edits) out.changes.push_back(row_change(e));
    out.b = Eigen::MatrixXd::Identity(m, m);
    Eigen::VectorXd rhs(m), lhs(m);
    const double alpha = p_->ctx.alpha;
    for (Eigen::Index a = 0; a < m; ++a) {
      double dv = 0.0;
      for (auto [c, x] : out.changes[a]) dv += x * v_[c];
      rhs[a] = alpha * dv;
      lhs[a] = w_[edits[a].row];
      for (Eigen::Index b = 0; b < m; ++b) {
        double s = 0.0;
        for (auto [c, x] : out.changes[a]) s += x * q_(c, edits[b].row);
        out.b(a, b) -= alpha * s;
      }
    }
    out.delta_objective = lhs.dot(out.b.partialPivLu().solve(rhs));
    return out;
  }

  void apply(const std::vector<RowEdit>& edits, const MoveEffect& eff) {
    const NodeId n = p_->g.num_nodes();
    const auto m = static_cast<Eigen::Index>(edits.size());
    Eigen::MatrixXd qu(n, m), vq = Eigen::MatrixXd::Zero(m, n);
    for (Eigen::Index a = 0; a < m; ++a) {
      qu.col(a) = q_.col(edits[a].row);
      for (auto [c, x] : eff.changes[a]) vq.row(a) += (p_->ctx.alpha * x) * q_.row(c);
    }
    q_.noalias() += qu * eff.b.partialPivLu().solve(vq);
    for (const auto& e : edits) {
      for (NodeId j : e.toggled) toggle_row(e.row, j);
    }
    refresh_vectors();
  }

  bool admissible_pair(NodeId a, NodeId b) const {
    return a != b && p_->budgets[a] > 0 && p_->budgets[b] > 0 && !p_->mask.is_protected(a, b);
  }

  void set_pair(NodeId a, NodeId b, bool on) {
    const int s = on ? 1 : -1;
    in_delta_[index(a, b)] = in_delta_[index(b, a)] = on ? 1 : 0;
    used_[a] += s;
    used_[b] += s;
  }

  bool take_best_move() {
    const NodeId n = p_->g.num_nodes();
    const double tol = 1e-12 * (1.0 + std::abs(objective()));
    double best = -tol;
    std::vector<RowEdit> best_edits;
    std::vector<std::pair<NodePair, bool>> best_pairs;

    auto consider = [&](std::vector<RowEdit> edits, std::vector<std::pair<NodePair, bool>> pairs) {
      auto eff = effect(edits);
      if (eff.delta_objective < best) {
        best = eff.delta_objective;
        best_edits = std::move(edits);
        best_pairs = std::move(pairs);
      }
    };

    for (NodeId a = 0; a < n; ++a) {
      for (NodeId b = a + 1; b < n; ++b) {
        if (!admissible_pair(a, b)) continue;
        const bool active = in_delta_[index(a, b)];
        if (active || (used_[a] < p_->budgets[a] && used_[b] < p_->budgets[b])) {
          consider({{a, {b}}, {b, {a}}}, {{{a, b}, !active}});
        }
        if (!active) continue;
        // Swap: drop {a, b} and reuse the freed unit at one endpoint for {x, c}.
        for (NodeId x : {a, b}) {
          const NodeId other = x == a ? b : a;
          for (NodeId c = 0; c < n; ++c) {
            if (c == other || c == x || !admissible_pair(x, c) || in_delta_[index(x, c)]) continue;
            if (used_[c] >= p_->budgets[c]) continue;
            consider({{x, {other, c}}, {other, {x}}, {c, {x}}},
                     {{{a, b}, false}, {make_pair_key(x, c), true}});
          }
        }
      }
    }
    if (best_edits.empty()) return false;
    apply(best_edits, effect(best_edits));
    for (auto [pair, on] : best_pairs) set_pair(pair.first, pair.second, on);
    return true;
  }

  const AttackProblem* p_;
  std::vector<std::vector<NodeId>> rows_;
  std::vector<int> used_;
  std::vector<char> in_delta_;
  Eigen::MatrixXd q_;
  Eigen::VectorXd indicator_, v_, w_;
};

}  // namespace

constexpr NodeId kKickNodeLimit = 32;
constexpr NodeId kDoubleKickNodeLimit = 10;

// Iterated descent: force `depth` admissible pairs against the incumbent, descend, and
// restart the scan whenever that lands somewhere strictly better.
void kick_descent(const AttackProblem& p, PairMoveRefiner& refiner, int max_moves, int depth) {
  const NodeId n = p.g.num_nodes();
  std::vector<NodePair> pairs;
  for (NodeId a = 0; a < n; ++a) {
    for (NodeId b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
  }
  auto attempt = [&](std::span<const NodePair> forced) {
    PairMoveRefiner trial = refiner;
    for (auto [a, b] : forced) {
      if (!trial.force(a, b)) return false;
    }
    trial.run(max_moves);
    if (!meaningfully_less(trial.objective(), refiner.objective())) return false;
    refiner = std::move(trial);
    return true;
  };
  bool improved = true;
  for (int round = 0; improved && round < p.max_sweeps; ++round) {
    improved = false;
    for (std::size_t x = 0; x < pairs.size() && !improved; ++x) {
      if (depth == 1) {
        improved = attempt(std::span(&pairs[x], 1));
        continue;
      }
      for (std::size_t y = x + 1; y < pairs.size() && !improved; ++y) {
        const std::array<NodePair, 2> two{pairs[x], pairs[y]};
        improved = attempt(two);
      }
    }
  }
}

AttackSolution solve_attack(const AttackProblem& p, const PerturbationDelta* warm) {
  const bool undirected = p.mode == EdgeMode::kUndirectedPair;
  Policy policy = sanitize_warm(p, warm);
  Evaluation ev = evaluate(p, policy, undirected);

  AttackSolution out;
  out.trace.push_back(ev.objective);
  out.converged = false;
  for (int sweep = 0; sweep < p.max_sweeps; ++sweep) {
    Policy next = policy;
    const bool changed = undirected ? improve_undirected(p, ev, next) : improve_directed(p, ev, next);
    out.sweeps = sweep + 1;
    if (!changed) {
      out.converged = true;
      break;
    }
    Evaluation next_ev = evaluate(p, next, undirected);
    if (undirected && !meaningfully_less(next_ev.objective, ev.objective)) {
      // The symmetric step is a heuristic; keep the incumbent when it does not help.
      out.converged = true;
      break;
    }
    policy = std::move(next);
    ev = std::move(next_ev);
    out.trace.push_back(ev.objective);
  }
  if (undirected && p.ctx.resolve(p.g.num_nodes()) == SolverKind::kDenseExact) {
    const int max_moves = p.max_sweeps * std::max<int>(1, p.g.num_nodes());
    PairMoveRefiner refiner(p, policy);
    refiner.run(max_moves);
    if (p.g.num_nodes() <= kKickNodeLimit) {
      PairMoveRefiner from_empty(p, Policy(p.g.num_nodes()));
      from_empty.run(max_moves);
      if (meaningfully_less(from_empty.objective(), refiner.objective())) refiner = from_empty;
      kick_descent(p, refiner, max_moves, 1);
      if (p.g.num_nodes() <= kDoubleKickNodeLimit) kick_descent(p, refiner, max_moves, 2);
    }
    Policy refined = refiner.policy();
    Evaluation refined_ev = evaluate(p, refined, false);
    if (meaningfully_less(refined_ev.objective, ev.objective)) {
      policy = std::move(refined);
      ev = std::move(refined_ev);
      out.trace.push_back(ev.objective);
    }
  }
  out.delta = to_delta(policy, p.mode);
  out.values = std::move(ev.values);
  return out;
}

}  // namespace advimmune::detail

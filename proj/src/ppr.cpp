#include "advimmune/ppr.hpp"

#include <cmath>
#include <string>

#include "advimmune/error.hpp"
#include "advimmune/parallel.hpp"

namespace advimmune {

void PPRContext::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
  if (!(tol > 0.0)) throw UsageError("solver tolerance must be positive");
  if (max_iter < 1) throw UsageError("max_iter must be at least 1");
}

SolverKind PPRContext::resolve(NodeId n) const {
  if (solver != SolverKind::kAuto) return solver;
  return n <= dense_limit ? SolverKind::kDenseExact : SolverKind::kPowerIteration;
}

Resolvent::Resolvent(const Digraph& g, const PPRContext& ctx)
    : graph_(g), alpha_(ctx.alpha), tol_(ctx.tol), max_iter_(ctx.max_iter),
      kind_(ctx.resolve(g.num_nodes())) {
  ctx.validate();
  if (kind_ != SolverKind::kDenseExact) return;
  const NodeId n = g.num_nodes();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (NodeId i = 0; i < n; ++i) {
    auto row = g.out(i);
    if (row.empty()) {
      m(i, i) -= alpha_;
      continue;
    }
    const double w = alpha_ / static_cast<double>(row.size());
    for (NodeId j : row) m(i, j) -= w;
  }
  lu_.compute(m);
}

Eigen::VectorXd Resolvent::apply_transition(const Eigen::VectorXd& x) const {
  const NodeId n = graph_.num_nodes();
  Eigen::VectorXd out(n);
  for (NodeId i = 0; i < n; ++i) {
    auto row = graph_.out(i);
    if (row.empty()) {
      out[i] = x[i];
      continue;
    }
    double s = 0.0;
    for (NodeId j : row) s += x[j];
    out[i] = s / static_cast<double>(row.size());
  }
  return out;
}

Eigen::VectorXd Resolvent::iterate(const Eigen::VectorXd& rhs, bool transposed) const {
  const NodeId n = graph_.num_nodes();
  Eigen::VectorXd x = rhs;
  Eigen::VectorXd next(n);
  double residual = 0.0;
  for (int it = 0; it < max_iter_; ++it) {
    if (transposed) {
      next = rhs;
      for (NodeId i = 0; i < n; ++i) {
        auto row = graph_.out(i);
        if (row.empty()) {
          next[i] += alpha_ * x[i];
          continue;
        }
        const double share = alpha_ * x[i] / static_cast<double>(row.size());
        for (NodeId j : row) next[j] += share;
      }
    } else {
      next = rhs + alpha_ * apply_transition(x);
    }
    residual = (next - x).lpNorm<Eigen::Infinity>();
    x.swap(next);
    if (residual < tol_) return x;
  }
  throw NumericError("power iteration did not converge within " + std::to_string(max_iter_) +
                         " iterations (residual " + std::to_string(residual) + ")",
                     residual);
}

Eigen::VectorXd Resolvent::solve(const Eigen::VectorXd& r) const {
  if (kind_ == SolverKind::kDenseExact) return lu_.solve(r);
  return iterate(r, false);
}

Eigen::VectorXd Resolvent::solve_transposed(const Eigen::VectorXd& w) const {
  if (kind_ == SolverKind::kDenseExact) return lu_.transpose().solve(w);
  return iterate(w, true);
}

Eigen::VectorXd Resolvent::ppr_row(NodeId t) const {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(graph_.num_nodes());
  e[t] = 1.0;
  return (1.0 - alpha_) * solve_transposed(e);
}

Eigen::MatrixXd Resolvent::inverse() const {
  const NodeId n = graph_.num_nodes();
  if (kind_ == SolverKind::kDenseExact) return lu_.inverse();
  Eigen::MatrixXd out(n, n);
  for (NodeId t = 0; t < n; ++t) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[t] = 1.0;
    out.row(t) = solve_transposed(e).transpose();
  }
  return out;
}

std::shared_ptr<const Resolvent> ResolventCache::get(const Digraph& g, const PPRContext& ctx) {
  const auto key = g.fingerprint();
  const auto kind = ctx.resolve(g.num_nodes());
  {
    std::lock_guard lock(mu_);
    auto [lo, hi] = entries_.equal_range(key);
    for (auto it = lo; it != hi; ++it) {
      const auto& r = *it->second;
      if (r.alpha() == ctx.alpha && r.kind() == kind && r.graph() == g) return it->second;
    }
  }
  auto fresh = std::make_shared<const Resolvent>(g, ctx);
  std::lock_guard lock(mu_);
  if (entries_.size() >= capacity_) entries_.clear();
  entries_.emplace(key, fresh);
  return fresh;
}

std::size_t ResolventCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void ResolventCache::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

Eigen::VectorXd ppr_row(const Digraph& g, const PPRContext& ctx, NodeId t) {
  if (t < 0 || t >= g.num_nodes()) throw std::out_of_range("ppr_row: node out of range");
  return Resolvent(g, ctx).ppr_row(t);
}

Eigen::VectorXd ppr_row(const Graph& g, const PPRContext& ctx, NodeId t) {
  return ppr_row(Digraph::from(g), ctx, t);
}

Eigen::MatrixXd ppr_matrix(const Digraph& g, const PPRContext& ctx) {
  Resolvent res(g, ctx);
  if (res.kind() == SolverKind::kDenseExact) return (1.0 - ctx.alpha) * res.inverse();
  const NodeId n = g.num_nodes();
  Eigen::MatrixXd out(n, n);
  parallel_for(n, Exec::kParallel, [&](std::int64_t t) {
    out.row(t) = res.ppr_row(static_cast<NodeId>(t)).transpose();
  });
  return out;
}

Eigen::MatrixXd ppr_matrix(const Graph& g, const PPRContext& ctx) {
  return ppr_matrix(Digraph::from(g), ctx);
}

Eigen::VectorXd value_vector(const Digraph& g, const PPRContext& ctx, const Eigen::VectorXd& r) {
  if (r.size() != g.num_nodes()) throw DimensionError("value_vector: reward length mismatch");
  if (!r.allFinite()) throw NumericError("value_vector: non-finite reward");
  return Resolvent(g, ctx).solve(r);
}

Eigen::VectorXd value_vector(const Graph& g, const PPRContext& ctx, const Eigen::VectorXd& r) {
  return value_vector(Digraph::from(g), ctx, r);
}

}  // namespace advimmune

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "advimmune/graph.hpp"

namespace advimmune {

enum class SolverKind { kAuto, kDenseExact, kPowerIteration };

// Propagation parameters. `alpha` is the walk-continuation probability; the
// restart probability is 1 - alpha.
struct PPRContext {
  double alpha = 0.85;
  SolverKind solver = SolverKind::kAuto;
  double tol = 1e-10;
  int max_iter = 10000;
  // kAuto picks the dense solver up to this many nodes.
  NodeId dense_limit = 4000;

  void validate() const;
  SolverKind resolve(NodeId n) const;
};

// (I - alpha * P)^-1 for one graph configuration, where P = D^-1 A with a
// zero-degree row replaced by its own basis row. Built once, solved many times;
// const member functions are safe to call concurrently.
class Resolvent {
 public:
  Resolvent(const Digraph& g, const PPRContext& ctx);

  // v with v = r + alpha P v.
  Eigen::VectorXd solve(const Eigen::VectorXd& r) const;
  // u with u = w + alpha P^T u (row form: u^T = w^T (I - alpha P)^-1).
  Eigen::VectorXd solve_transposed(const Eigen::VectorXd& w) const;
  // Personalized PageRank row (1 - alpha) e_t (I - alpha P)^-1.
  Eigen::VectorXd ppr_row(NodeId t) const;
  Eigen::MatrixXd inverse() const;
  // (P x) without forming P.
  Eigen::VectorXd apply_transition(const Eigen::VectorXd& x) const;

  const Digraph& graph() const { return graph_; }
  double alpha() const { return alpha_; }
  SolverKind kind() const { return kind_; }
  NodeId size() const { return graph_.num_nodes(); }

 private:
  Eigen::VectorXd iterate(const Eigen::VectorXd& rhs, bool transposed) const;

  Digraph graph_;
  double alpha_;
  double tol_;
  int max_iter_;
  SolverKind kind_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

// Thread-safe cache of factorizations keyed by graph fingerprint.
class ResolventCache {
 public:
  explicit ResolventCache(std::size_t capacity = 256) : capacity_(capacity) {}
  std::shared_ptr<const Resolvent> get(const Digraph& g, const PPRContext& ctx);
  std::size_t size() const;
  void clear();

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::unordered_multimap<std::uint64_t, std::shared_ptr<const Resolvent>> entries_;
};

Eigen::VectorXd ppr_row(const Digraph& g, const PPRContext& ctx, NodeId t);
Eigen::VectorXd ppr_row(const Graph& g, const PPRContext& ctx, NodeId t);
Eigen::MatrixXd ppr_matrix(const Digraph& g, const PPRContext& ctx);
Eigen::MatrixXd ppr_matrix(const Graph& g, const PPRContext& ctx);
Eigen::VectorXd value_vector(const Digraph& g, const PPRContext& ctx, const Eigen::VectorXd& r);
Eigen::VectorXd value_vector(const Graph& g, const PPRContext& ctx, const Eigen::VectorXd& r);

}  // namespace advimmune

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "advimmune/error.hpp"
#include "advimmune/ppr.hpp"
#include "support/oracles.hpp"

using namespace advimmune;

namespace {

Graph random_graph(std::uint64_t seed, NodeId n, double p) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  std::vector<NodePair> e;
  for (NodeId a = 0; a < n; ++a)
    for (NodeId b = a + 1; b < n; ++b)
      if (coin(rng)) e.emplace_back(a, b);
  return Graph::from_edges(n, e);
}

PPRContext dense() {
  PPRContext c;
  c.solver = SolverKind::kDenseExact;
  return c;
}

PPRContext power() {
  PPRContext c;
  c.solver = SolverKind::kPowerIteration;
  return c;
}

}  // namespace

TEST_CASE("ppr_row examples") {
  CHECK(ppr_row(Graph(1), dense(), 0)[0] == doctest::Approx(1.0).epsilon(1e-15));

  const Graph k2 = Graph::from_edges(2, std::vector<NodePair>{{0, 1}});
  const double a = 0.85;
  for (auto ctx : {dense(), power()}) {
    const auto row = ppr_row(k2, ctx, 0);
    CHECK(row[0] == doctest::Approx(1.0 / (1.0 + a)).epsilon(1e-9));
    CHECK(row[1] == doctest::Approx(a / (1.0 + a)).epsilon(1e-9));
  }
  const auto m = ppr_matrix(k2, dense());
  CHECK(m(0, 0) == doctest::Approx(0.54054).epsilon(1e-4));
  CHECK(m(1, 0) == doctest::Approx(0.45946).epsilon(1e-4));

  std::vector<NodePair> complete;
  for (NodeId i = 0; i < 5; ++i)
    for (NodeId j = i + 1; j < 5; ++j) complete.emplace_back(i, j);
  const auto row = ppr_row(Graph::from_edges(5, complete), dense(), 2);
  for (NodeId j = 0; j < 5; ++j) {
    if (j == 2) continue;
    CHECK(row[2] > row[j]);
    CHECK(row[j] == doctest::Approx(row[0 == 2 ? 1 : 0]).epsilon(1e-12));
  }
}

TEST_CASE("ppr_matrix of an empty graph is the identity") {
  const auto m = ppr_matrix(Graph(3), dense());
  CHECK((m - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("ppr rows are probability vectors and match the dense oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = random_graph(seed, 25, 0.12);
    const auto m = ppr_matrix(g, dense());
    const auto ref = oracle::ppr(oracle::adjacency(g), 0.85);
    CHECK((m - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.minCoeff() >= -1e-15);
    CHECK((m.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("value_vector") {
  const Graph p = load_edge_list("0 1\n1 2");
  CHECK(value_vector(p, dense(), Eigen::VectorXd::Zero(3)).norm() == 0.0);
  Eigen::VectorXd r(3);
  r << 0.3, -1.0, 2.0;
  // Isolated nodes walk back to themselves, so v = r / (1 - alpha).
  CHECK((value_vector(Graph(3), dense(), r) - r / 0.15).norm() < 1e-12);

  // Truncated Neumann series sum_k (alpha P)^k r.
  r << 1.0, 0.0, 0.0;
  Eigen::MatrixXd pm = Eigen::MatrixXd::Zero(3, 3);
  pm(0, 1) = 1.0;
  pm(1, 0) = pm(1, 2) = 0.5;
  pm(2, 1) = 1.0;
  Eigen::VectorXd term = r, sum = r;
  for (int k = 0; k < 1000000 && term.lpNorm<Eigen::Infinity>() > 1e-300; ++k) {
    term = 0.85 * pm * term;
    sum += term;
  }
  CHECK((value_vector(p, dense(), r) - sum).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK((value_vector(p, power(), r) - sum).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("linear-system identity and solver agreement") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  for (NodeId n : {10, 50, 120, 200}) {
    const Graph g = random_graph(n, n, 6.0 / n);
    const Digraph d = Digraph::from(g);
    Eigen::VectorXd r(n);
    for (auto& x : r) x = nd(rng);
    Resolvent exact(d, dense()), iter(d, power());
    const auto v = exact.solve(r);
    CHECK((v - 0.85 * exact.apply_transition(v) - r).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((v - iter.solve(r)).lpNorm<Eigen::Infinity>() < 1e-8);
    const auto u = exact.solve_transposed(r);
    CHECK((u - iter.solve_transposed(r)).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((exact.inverse() * r - v).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("zero-degree rows redirect to themselves") {
  const Graph g = load_edge_list("n=4\n0 1\n1 2");
  const auto m = ppr_matrix(g, dense());
  CHECK(m(3, 3) == doctest::Approx(1.0));
  CHECK(m.row(3).sum() == doctest::Approx(1.0));
}

TEST_CASE("context validation and non-convergence") {
  PPRContext bad;
  bad.alpha = 1.0;
  CHECK_THROWS(bad.validate());
  bad.alpha = 0.5;
  bad.max_iter = 0;
  CHECK_THROWS(bad.validate());
  PPRContext tight = power();
  tight.max_iter = 2;
  const Graph g = random_graph(1, 30, 0.2);
  CHECK_THROWS_AS(ppr_row(g, tight, 0), NumericError);
  PPRContext a;
  CHECK(a.resolve(100) == SolverKind::kDenseExact);
  CHECK(a.resolve(5000) == SolverKind::kPowerIteration);
}

TEST_CASE("resolvent cache reuses factorizations") {
  ResolventCache cache(2);
  const Digraph a = Digraph::from(random_graph(1, 10, 0.3));
  const Digraph b = Digraph::from(random_graph(2, 10, 0.3));
  const Digraph c = Digraph::from(random_graph(3, 10, 0.3));
  auto ra = cache.get(a, dense());
  CHECK(cache.get(a, dense()) == ra);
  cache.get(b, dense());
  CHECK(cache.size() == 2);
  cache.get(c, dense());
  CHECK(cache.size() <= 2);
  CHECK(cache.get(c, dense())->graph() == c);
}

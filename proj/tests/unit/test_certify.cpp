#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "advimmune/certify.hpp"
#include "advimmune/harness.hpp"
#include "support/oracles.hpp"

using namespace advimmune;

namespace {

const PPRContext kCtx;

std::vector<int> explicit_budgets(const PerturbationScenario& sc, const Graph& g) {
  return sc.local_budget.budgets(g);
}

ImmuneMask protect_all(NodeId n) {
  ImmuneMask m;
  for (NodeId a = 0; a < n; ++a)
    for (NodeId b = a + 1; b < n; ++b) m.protect_pair(a, b);
  return m;
}

}  // namespace

TEST_CASE("margin examples") {
  Logits l;
  l.h = Eigen::MatrixXd(1, 2);
  l.h << 2, 1;
  l.y_ref = {0};
  CHECK(margin(0, 1, Graph(1), kCtx, l) == doctest::Approx(1.0));
  CHECK(margin(0, 0, Graph(1), kCtx, l) == 0.0);

  Logits two;
  two.h = Eigen::Matrix2d::Identity();
  two.y_ref = {0, 1};
  const Graph k2 = load_edge_list("0 1");
  CHECK(margin(0, 1, k2, kCtx, two) == doctest::Approx(0.15 / 1.85).epsilon(1e-12));
  CHECK(margin(0, 1, k2, kCtx, two) == doctest::Approx(0.08108).epsilon(1e-4));
}

TEST_CASE("budget rules") {
  const Graph g = karate();
  const auto b = LocalBudgetRule::degree_offset(6).budgets(g);
  CHECK(b[33] == 11);
  CHECK(b[0] == 10);
  CHECK(b[11] == 0);
  CHECK(LocalBudgetRule::uniform(2).budgets(g) == std::vector<int>(34, 2));
  CHECK_THROWS(LocalBudgetRule::explicit_values({1, 2}).budgets(g));
}

TEST_CASE("mask semantics") {
  ImmuneMask m;
  m.protect_pair(3, 1);
  m.protect_node(5);
  CHECK(m.is_protected(1, 3));
  CHECK(m.is_protected(5, 0));
  CHECK(m.is_protected(0, 5));
  CHECK(!m.is_protected(0, 1));
  CHECK(m.edge_budget_used() == 1);
  CHECK(m.node_budget_used() == 1);
  ImmuneMask bigger = m;
  bigger.protect_pair(0, 1);
  CHECK(m.subset_of(bigger));
  CHECK(!bigger.subset_of(m));
  const PerturbationDelta d(EdgeMode::kDirectedFragile, {{0, 1, 1}, {1, 3, 1}, {2, 5, 1}, {2, 4, 1}});
  CHECK(apply_mask(d, m).size() == 2);
  CHECK(apply_mask(d, bigger).size() == 1);
}

TEST_CASE("trivial worst cases") {
  const auto inst = random_instance(4, 6, 0.5, 2, 2, EdgeMode::kDirectedFragile);
  PerturbationScenario none = inst.scenario;
  none.local_budget = LocalBudgetRule::uniform(0);
  const NodeId t = 2;
  const int k = 1 - inst.logits.y_ref[t];
  const double clean = margin(t, k, inst.graph, kCtx, inst.logits);
  for (auto mode : {EdgeMode::kDirectedFragile, EdgeMode::kUndirectedPair}) {
    none.edge_mode = mode;
    auto wc = worst_case_margin(t, k, inst.graph, kCtx, inst.logits, none, {});
    CHECK(wc.margin == doctest::Approx(clean).epsilon(1e-12));
    CHECK(wc.delta.empty());
    PerturbationScenario sc = inst.scenario;
    sc.edge_mode = mode;
    auto masked = worst_case_margin(t, k, inst.graph, kCtx, inst.logits, sc, protect_all(6));
    CHECK(masked.margin == doctest::Approx(clean).epsilon(1e-12));
    CHECK(masked.delta.empty());
    auto bf = brute_force_worst_margin(t, k, inst.graph, kCtx, inst.logits, none, {});
    CHECK(bf.margin == doctest::Approx(clean).epsilon(1e-12));
  }
  CHECK_THROWS(worst_case_margin(t, inst.logits.y_ref[t], inst.graph, kCtx, inst.logits, none, {}));
}

TEST_CASE("triangle with one removable pair") {
  const Graph tri = load_edge_list("0 1\n1 2\n0 2");
  Logits l;
  l.h = Eigen::MatrixXd(3, 2);
  l.h << 1, 0, 0, 1, 0.2, 0.1;
  l.y_ref = reference_classes(tri, kCtx, l);
  PerturbationScenario sc;
  sc.edge_mode = EdgeMode::kUndirectedPair;
  sc.local_budget = LocalBudgetRule::explicit_values({1, 1, 0});
  const int k = 1 - l.y_ref[0];
  const double clean = margin(0, k, tri, kCtx, l);
  const double cut = margin(0, k, apply_delta(tri, PerturbationDelta(EdgeMode::kUndirectedPair, {{0, 1, -1}})), kCtx, l);
  const auto bf = brute_force_worst_margin(0, k, tri, kCtx, l, sc, {});
  CHECK(bf.margin == doctest::Approx(std::min(clean, cut)).epsilon(1e-12));
  CHECK(admissible_flips(tri, sc, {}).size() == 1);
}

TEST_CASE("library brute force matches the test-side enumerator") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto mode = seed % 2 ? EdgeMode::kUndirectedPair : EdgeMode::kDirectedFragile;
    const auto inst = random_instance(100 + seed, 5 + seed % 2, 0.45, 2 + seed % 2, 1, mode);
    if (admissible_flips(inst.graph, inst.scenario, {}).size() > kMaxEnumerablePairs) continue;
    const auto ref = oracle::worst_margins(inst.graph, explicit_budgets(inst.scenario, inst.graph), mode, {},
                                           kCtx.alpha, inst.logits.h, inst.logits.y_ref);
    CertifyOptions bf;
    bf.kind = CertifierKind::kBruteForce;
    const auto cert = certify_graph(all_nodes(inst.graph.num_nodes()), inst.graph, kCtx, inst.logits,
                                    inst.scenario, {}, bf);
    for (const auto& c : cert.targets) CHECK(c.worst_margin == doctest::Approx(ref[c.node]).epsilon(1e-10));
  }
}

TEST_CASE("policy iteration matches the oracle in directed mode") {
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    const auto inst = random_instance(seed, 4 + seed % 5, 0.4, 2 + seed % 2, 2, EdgeMode::kDirectedFragile);
    if (admissible_flips(inst.graph, inst.scenario, {}).size() > kMaxEnumerablePairs) continue;
    for (NodeId t = 0; t < inst.graph.num_nodes(); ++t) {
      for (int k = 0; k < inst.logits.num_classes(); ++k) {
        if (k == inst.logits.y_ref[t]) continue;
        const auto pi = worst_case_margin(t, k, inst.graph, kCtx, inst.logits, inst.scenario, {});
        const auto bf = brute_force_worst_margin(t, k, inst.graph, kCtx, inst.logits, inst.scenario, {});
        CHECK(std::abs(pi.margin - bf.margin) < 1e-9);
        CHECK(pi.converged);
        ++compared;
      }
    }
  }
  CHECK(compared > 200);
}

TEST_CASE("undirected policy iteration never undercuts the oracle") {
  int exact = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    const auto inst = random_instance(seed, 4 + seed % 5, 0.4, 2 + seed % 2, 2, EdgeMode::kUndirectedPair);
    if (admissible_flips(inst.graph, inst.scenario, {}).size() > kMaxEnumerablePairs) continue;
    for (NodeId t = 0; t < inst.graph.num_nodes(); ++t) {
      for (int k = 0; k < inst.logits.num_classes(); ++k) {
        if (k == inst.logits.y_ref[t]) continue;
        const auto pi = worst_case_margin(t, k, inst.graph, kCtx, inst.logits, inst.scenario, {});
        const auto bf = brute_force_worst_margin(t, k, inst.graph, kCtx, inst.logits, inst.scenario, {});
        CHECK(pi.margin >= bf.margin - 1e-9);
        exact += std::abs(pi.margin - bf.margin) <= 1e-6;
        ++total;
      }
    }
  }
  CHECK(exact >= 0.95 * total);
}

TEST_CASE("worst deltas respect budgets, masks and the clean bound") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto mode = seed % 2 ? EdgeMode::kUndirectedPair : EdgeMode::kDirectedFragile;
    const auto inst = random_instance(200 + seed, 8, 0.35, 3, 2, mode);
    ImmuneMask mask;
    mask.protect_node(static_cast<NodeId>(seed % 8));
    mask.protect_pair(1, 2);
    const auto cert = certify_graph(all_nodes(8), inst.graph, kCtx, inst.logits, inst.scenario, mask);
    const auto budgets = inst.scenario.local_budget.budgets(inst.graph);
    for (const auto& c : cert.targets) {
      CHECK(c.robust == (c.worst_margin > 0.0));
      double clean = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 3; ++k)
        if (k != inst.logits.y_ref[c.node]) clean = std::min(clean, margin(c.node, k, inst.graph, kCtx, inst.logits));
      CHECK(c.worst_margin <= clean + 1e-12);
      REQUIRE(c.worst_delta);
      c.worst_delta->validate_against(inst.graph);
      const auto charges = c.worst_delta->charges(8);
      for (NodeId v = 0; v < 8; ++v) CHECK(charges[v] <= budgets[v]);
      for (const auto& f : c.worst_delta->flips()) CHECK(!mask.is_protected(f.from, f.to));
      const double m = margin(c.node, c.worst_class, perturb(inst.graph, *c.worst_delta), kCtx, inst.logits);
      CHECK(m == doctest::Approx(c.worst_margin).epsilon(1e-9));
    }
  }
}

TEST_CASE("attacker objective is non-increasing across sweeps") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto mode = seed % 2 ? EdgeMode::kUndirectedPair : EdgeMode::kDirectedFragile;
    const auto inst = random_instance(300 + seed, 14, 0.3, 2, 3, mode);
    const int k = 1 - inst.logits.y_ref[0];
    const auto wc = worst_case_margin(0, k, inst.graph, kCtx, inst.logits, inst.scenario, {});
    for (std::size_t i = 1; i < wc.objective_trace.size(); ++i) {
      CHECK(wc.objective_trace[i] <= wc.objective_trace[i - 1] + 1e-12);
    }
  }
}

TEST_CASE("mask dominance against the oracle") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto mode = seed % 2 ? EdgeMode::kUndirectedPair : EdgeMode::kDirectedFragile;
    const auto inst = random_instance(400 + seed, 6, 0.4, 2, 1, mode);
    const auto budgets = explicit_budgets(inst.scenario, inst.graph);
    ImmuneMask small, large;
    small.protect_pair(0, 1);
    large = small;
    large.protect_node(static_cast<NodeId>(seed % 6));
    const auto a = oracle::worst_margins(inst.graph, budgets, mode, small, kCtx.alpha, inst.logits.h, inst.logits.y_ref);
    const auto b = oracle::worst_margins(inst.graph, budgets, mode, large, kCtx.alpha, inst.logits.h, inst.logits.y_ref);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] >= a[i] - 1e-12);
  }
}

TEST_CASE("all-classes minimum and tie rule") {
  const auto inst = random_instance(77, 6, 0.4, 3, 1, EdgeMode::kDirectedFragile);
  const auto budgets = explicit_budgets(inst.scenario, inst.graph);
  const auto ref = oracle::worst_margins(inst.graph, budgets, EdgeMode::kDirectedFragile, {}, kCtx.alpha,
                                         inst.logits.h, inst.logits.y_ref);
  for (NodeId t = 0; t < 6; ++t) {
    const auto bf = brute_force_all_classes(t, inst.graph, kCtx, inst.logits, inst.scenario, {});
    const auto pi = worst_margin_all_classes(t, inst.graph, kCtx, inst.logits, inst.scenario, {});
    CHECK(bf.margin == doctest::Approx(ref[t]).epsilon(1e-10));
    CHECK(pi.margin == doctest::Approx(ref[t]).epsilon(1e-9));
  }

  Logits flat;
  flat.h = Eigen::MatrixXd::Constant(6, 3, 1.0);
  flat.y_ref.assign(6, 1);
  const auto wc = worst_margin_all_classes(2, inst.graph, kCtx, flat, inst.scenario, {});
  CHECK(wc.margin == doctest::Approx(0.0));
  CHECK(wc.worst_class == 0);
  const auto cert = certify_graph(all_nodes(6), inst.graph, kCtx, flat, inst.scenario, {});
  for (const auto& c : cert.targets) {
    CHECK(!c.robust);
    CHECK(c.worst_class == 0);
  }
}

TEST_CASE("zero budgets with separable logits are fully robust") {
  Logits l;
  l.h = Eigen::MatrixXd(4, 2);
  l.h << 3, 0, 3, 0, 0, 3, 0, 3;
  const Graph g = load_edge_list("0 1\n2 3\n1 2");
  l.y_ref = reference_classes(g, kCtx, l);
  PerturbationScenario sc;
  sc.local_budget = LocalBudgetRule::uniform(0);
  const auto cert = certify_graph(all_nodes(4), g, kCtx, l, sc, {});
  CHECK(cert.robust_count() == 4);
}

TEST_CASE("karate at reduced budgets matches the enumerator") {
  FeatureMatrix f;
  f.x = Eigen::MatrixXd::Identity(34, 34);
  f.labels = karate_factions();
  f.train_mask = stratified_train_mask(f.labels, 0.5, 1);
  const Graph g = karate();
  Logits l = train_linear_logits(f, 200, 0.5, 1);
  l.y_ref = reference_classes(g, kCtx, l);
  std::vector<int> budgets(34, 0);
  budgets[0] = 2;
  budgets[33] = 1;
  PerturbationScenario sc;
  sc.local_budget = LocalBudgetRule::explicit_values(budgets);
  const auto ref = oracle::worst_margins(g, budgets, EdgeMode::kDirectedFragile, {}, kCtx.alpha, l.h, l.y_ref);
  const auto cert = certify_graph(all_nodes(34), g, kCtx, l, sc, {});
  std::size_t robust = 0;
  for (const auto& c : cert.targets) {
    CHECK(std::abs(c.worst_margin - ref[c.node]) < 1e-9);
    robust += c.robust;
  }
  CHECK(robust > 0);
  CHECK(robust < 34);
}

TEST_CASE("serial and parallel certification agree exactly") {
  for (auto mode : {EdgeMode::kDirectedFragile, EdgeMode::kUndirectedPair}) {
    const auto inst = random_instance(5, 40, 0.15, 3, 3, mode);
    for (bool per_target : {false, true}) {
      CertifyOptions s, p;
      s.exec = Exec::kSerial;
      s.per_target = p.per_target = per_target;
      const auto a = certify_graph(all_nodes(40), inst.graph, kCtx, inst.logits, inst.scenario, {}, s);
      const auto b = certify_graph(all_nodes(40), inst.graph, kCtx, inst.logits, inst.scenario, {}, p);
      for (std::size_t i = 0; i < a.targets.size(); ++i) {
        CHECK(a.targets[i].worst_margin == b.targets[i].worst_margin);
        CHECK(*a.targets[i].worst_delta == *b.targets[i].worst_delta);
      }
    }
  }
  std::uint64_t seed = 6;
  auto small = random_instance(seed, 7, 0.4, 2, 1, EdgeMode::kDirectedFragile);
  while (admissible_flips(small.graph, small.scenario, {}).size() > kMaxEnumerablePairs) {
    small = random_instance(++seed, 7, 0.4, 2, 1, EdgeMode::kDirectedFragile);
  }
  CertifyOptions bs, bp;
  bs.kind = bp.kind = CertifierKind::kBruteForce;
  bs.exec = Exec::kSerial;
  const auto a = certify_graph(all_nodes(7), small.graph, kCtx, small.logits, small.scenario, {}, bs);
  const auto b = certify_graph(all_nodes(7), small.graph, kCtx, small.logits, small.scenario, {}, bp);
  for (std::size_t i = 0; i < a.targets.size(); ++i) {
    CHECK(a.targets[i].worst_margin == b.targets[i].worst_margin);
    CHECK(*a.targets[i].worst_delta == *b.targets[i].worst_delta);
  }
}

TEST_CASE("warm starts reach the same directed optimum") {
  const auto inst = random_instance(8, 30, 0.2, 2, 3, EdgeMode::kDirectedFragile);
  const auto cold = certify_graph(all_nodes(30), inst.graph, kCtx, inst.logits, inst.scenario, {});
  ImmuneMask mask;
  mask.protect_node(3);
  const auto warm = certify_graph(all_nodes(30), inst.graph, kCtx, inst.logits, inst.scenario, mask, {}, &cold);
  const auto fresh = certify_graph(all_nodes(30), inst.graph, kCtx, inst.logits, inst.scenario, mask);
  for (std::size_t i = 0; i < warm.targets.size(); ++i) {
    CHECK(warm.targets[i].worst_margin == doctest::Approx(fresh.targets[i].worst_margin).epsilon(1e-10));
  }
}

TEST_CASE("global budget is honoured by the oracle") {
  const auto inst = random_instance(12, 6, 0.4, 2, 2, EdgeMode::kDirectedFragile);
  PerturbationScenario one = inst.scenario;
  one.global_budget = 1;
  CertifyOptions bf;
  bf.kind = CertifierKind::kBruteForce;
  const auto cert = certify_graph(all_nodes(6), inst.graph, kCtx, inst.logits, one, {}, bf);
  const auto loose = certify_graph(all_nodes(6), inst.graph, kCtx, inst.logits, inst.scenario, {}, bf);
  for (std::size_t i = 0; i < cert.targets.size(); ++i) {
    CHECK(cert.targets[i].worst_delta->size() <= 1);
    CHECK(cert.targets[i].worst_margin >= loose.targets[i].worst_margin - 1e-12);
  }
}

TEST_CASE("enumeration guard") {
  const auto inst = random_instance(13, 12, 0.4, 2, 2, EdgeMode::kDirectedFragile);
  PerturbationScenario sc = inst.scenario;
  sc.local_budget = LocalBudgetRule::uniform(2);
  CHECK_THROWS_AS(brute_force_worst_margin(0, 1 - inst.logits.y_ref[0], inst.graph, kCtx, inst.logits, sc, {}),
                  std::length_error);
}

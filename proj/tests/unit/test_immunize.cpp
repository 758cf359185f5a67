#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "advimmune/harness.hpp"
#include "advimmune/immunize.hpp"
#include "support/oracles.hpp"

using namespace advimmune;

namespace {

const PPRContext kCtx;

struct Exact {
  const RandomInstance& inst;
  std::vector<int> budgets = inst.scenario.local_budget.budgets(inst.graph);

  double operator()(const ImmuneMask& m) const {
    return oracle::sum(oracle::worst_margins(inst.graph, budgets, inst.scenario.edge_mode, m,
                                             kCtx.alpha, inst.logits.h, inst.logits.y_ref));
  }
};

RandomInstance small_instance(std::uint64_t seed, NodeId n, EdgeMode mode, std::size_t max_pairs = 18) {
  for (;; ++seed) {
    auto inst = random_instance(seed, n, 0.4, 2 + static_cast<int>(seed % 2), 2, mode);
    if (admissible_flips(inst.graph, inst.scenario, {}).size() <= max_pairs) return inst;
  }
}

CertifyOptions brute() {
  CertifyOptions o;
  o.kind = CertifierKind::kBruteForce;
  return o;
}

}  // namespace

TEST_CASE("total worst margin") {
  const auto inst = small_instance(1, 6, EdgeMode::kDirectedFragile);
  const auto targets = all_nodes(6);
  PerturbationScenario none = inst.scenario;
  none.local_budget = LocalBudgetRule::uniform(0);
  double clean = 0.0;
  for (NodeId t = 0; t < 6; ++t) {
    double m = std::numeric_limits<double>::infinity();
    for (int k = 0; k < inst.logits.num_classes(); ++k) {
      if (k != inst.logits.y_ref[t]) m = std::min(m, margin(t, k, inst.graph, kCtx, inst.logits));
    }
    clean += m;
  }
  CHECK(total_worst_margin(targets, inst.graph, kCtx, inst.logits, none, {}) == doctest::Approx(clean).epsilon(1e-12));
  ImmuneMask all;
  for (NodeId v = 0; v < 6; ++v) all.protect_node(v);
  CHECK(total_worst_margin(targets, inst.graph, kCtx, inst.logits, inst.scenario, all) ==
        doctest::Approx(clean).epsilon(1e-12));
  const double exact = Exact{inst}({});
  CHECK(total_worst_margin(targets, inst.graph, kCtx, inst.logits, inst.scenario, {}) ==
        doctest::Approx(exact).epsilon(1e-10));
  CHECK(total_worst_margin(targets, inst.graph, kCtx, inst.logits, inst.scenario, {}, brute()) ==
        doctest::Approx(exact).epsilon(1e-10));
}

TEST_CASE("zero budgets return the unmodified state") {
  const auto inst = small_instance(2, 6, EdgeMode::kDirectedFragile);
  const auto targets = all_nodes(6);
  const auto e = advimmune_edge(targets, inst.graph, kCtx, inst.logits, inst.scenario, 0);
  CHECK(e.mask.empty());
  REQUIRE(e.objective_trace.size() == 1);
  CHECK(e.objective_trace[0] == doctest::Approx(Exact{inst}({})).epsilon(1e-10));
  const auto v = advimmune_node(targets, inst.graph, kCtx, inst.logits, inst.scenario, 0);
  CHECK(v.mask.empty());
  CHECK(v.status == RunStatus::kCompleted);
  CHECK_THROWS_AS(advimmune_edge(targets, inst.graph, kCtx, inst.logits, inst.scenario, 1,
                                 ImmunizeOptions{{}, 0, {}, true}),
                  std::invalid_argument);
}

TEST_CASE("a single attacking flip is the one protected") {
  // Node 0's only edge is the single admissible flip; its removal isolates 0.
  const Graph g = load_edge_list("0 1\n1 2");
  Logits l;
  l.h = Eigen::MatrixXd(3, 2);
  l.h << 0.0, 0.3, 2.0, 0.0, 2.0, 0.0;
  l.y_ref = reference_classes(g, kCtx, l);
  REQUIRE(l.y_ref[0] == 0);
  PerturbationScenario sc;
  sc.local_budget = LocalBudgetRule::explicit_values({1, 0, 0});
  REQUIRE(admissible_flips(g, sc, {}).size() == 2);
  const std::vector<NodeId> targets{0};
  const auto run = advimmune_edge(targets, g, kCtx, l, sc, 1);
  CHECK(run.mask.protected_pairs() == std::set<NodePair>{{0, 1}});
  CHECK(run.objective_trace.back() == doctest::Approx(margin(0, 1, g, kCtx, l)).epsilon(1e-12));
  CHECK(run.objective_trace.front() < run.objective_trace.back());
  CHECK(run.status == RunStatus::kCompleted);

  const auto again = advimmune_edge(targets, g, kCtx, l, sc, 3);
  CHECK(again.mask.edge_budget_used() == 1);
  CHECK(again.status == RunStatus::kSaturated);
  CHECK(!again.message.empty());
}

TEST_CASE("edge greedy sits between the median and the best pair set") {
  int below_median = 0, cases = 0;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    const auto mode = seed % 2 ? EdgeMode::kUndirectedPair : EdgeMode::kDirectedFragile;
    const auto inst = small_instance(100 + 7 * seed, 5 + seed % 2, mode, 14);
    const Exact exact{inst};
    const NodeId n = inst.graph.num_nodes();
    std::vector<NodePair> pairs;
    for (NodeId a = 0; a < n; ++a)
      for (NodeId b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
    for (std::size_t budget : {1u, 2u}) {
      std::vector<double> values;
      for (std::size_t x = 0; x < pairs.size(); ++x) {
        for (std::size_t y = budget == 1 ? x : x + 1; y < pairs.size(); ++y) {
          ImmuneMask m;
          m.protect_pair(pairs[x].first, pairs[x].second);
          m.protect_pair(pairs[y].first, pairs[y].second);
          values.push_back(exact(m));
          if (budget == 1) break;
        }
      }
      std::sort(values.begin(), values.end());
      const auto run = advimmune_edge(all_nodes(n), inst.graph, kCtx, inst.logits, inst.scenario, budget);
      const double j = exact(run.mask);
      CHECK(j <= values.back() + 1e-9);
      below_median += j < values[values.size() / 2] - 1e-9;
      ++cases;
    }
  }
  MESSAGE("greedy below the median pair set in " << below_median << " of " << cases << " cases");
  CHECK(below_median == 0);
}

TEST_CASE("robustness gain against the oracle") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto inst = small_instance(200 + 11 * seed, 7, EdgeMode::kDirectedFragile);
    const Exact exact{inst};
    const auto targets = all_nodes(7);
    ImmuneMask base;
    base.protect_pair(0, 1);
    const auto cert = certify_graph(targets, inst.graph, kCtx, inst.logits, inst.scenario, base);
    const double before = exact(base);
    for (NodeId j = 0; j < 7; ++j) {
      ImmuneMask with = base;
      with.protect_node(j);
      const double gain = robustness_gain(j, base, cert, targets, inst.graph, kCtx, inst.logits, inst.scenario);
      CHECK(gain == doctest::Approx(exact(with) - before).epsilon(1e-9));
      CHECK(gain >= -1e-9);
    }
    ImmuneMask j_protected = base;
    j_protected.protect_node(3);
    CHECK_THROWS(robustness_gain(3, j_protected, cert, targets, inst.graph, kCtx, inst.logits, inst.scenario));
  }

  // A node outside every worst delta whose protection changes nothing has zero gain.
  const Graph g = load_edge_list("0 1\n1 2\n3 4");
  Logits l;
  l.h = Eigen::MatrixXd(5, 2);
  l.h << 0.0, 0.3, 2.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0, 0.0;
  l.y_ref = reference_classes(g, kCtx, l);
  PerturbationScenario sc;
  sc.local_budget = LocalBudgetRule::explicit_values({1, 0, 0, 0, 0});
  const std::vector<NodeId> targets{0};
  const auto cert = certify_graph(targets, g, kCtx, l, sc, {});
  CHECK(robustness_gain(4, {}, cert, targets, g, kCtx, l, sc) == 0.0);
}

// Lazy updates equal full-update greedy whenever gains only shrink between rounds. When they differ,
// some candidate's gain must have grown after the first selection.
TEST_CASE("lazy and full-update greedy choose the same nodes unless a gain grows") {
  int same = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    const auto mode = seed % 3 == 2 ? EdgeMode::kUndirectedPair : EdgeMode::kDirectedFragile;
    const auto inst = small_instance(300 + 13 * seed, 6 + seed % 2, mode);
    const NodeId n = inst.graph.num_nodes();
    const auto targets = all_nodes(n);
    for (std::size_t budget : {1u, 2u}) {
      ImmunizeOptions lazy;
      lazy.candidate_count = n;
      lazy.certify = brute();
      ImmunizeOptions full = lazy;
      full.lazy = false;
      const auto a = advimmune_node(targets, inst.graph, kCtx, inst.logits, inst.scenario, budget, lazy);
      const auto b = advimmune_node(targets, inst.graph, kCtx, inst.logits, inst.scenario, budget, full);
      for (int d : a.gain_updates) CHECK(d >= 1);
      ++total;
      if (a.mask == b.mask) {
        CHECK(a.objective_trace == b.objective_trace);
        ++same;
        continue;
      }
      REQUIRE(budget == 2);
      // Both runs share the first pick; find a gain that grew afterwards.
      ImmuneMask first;
      const NodeId pick = a.candidates[std::max_element(a.initial_gains.begin(), a.initial_gains.end()) -
                                       a.initial_gains.begin()];
      first.protect_node(pick);
      const auto cert = certify_graph(targets, inst.graph, kCtx, inst.logits, inst.scenario, first, brute());
      bool grew = false;
      for (std::size_t i = 0; i < a.candidates.size(); ++i) {
        const NodeId v = a.candidates[i];
        if (v == pick) continue;
        const double now = robustness_gain(v, first, cert, targets, inst.graph, kCtx, inst.logits,
                                           inst.scenario, brute());
        grew = grew || now > a.initial_gains[i] + 1e-12;
      }
      CHECK(grew);
    }
  }
  MESSAGE("lazy == full-update greedy in " << same << " of " << total << " runs");
  CHECK(same >= total * 3 / 4);
}

TEST_CASE("candidate ranking ties go to the smallest id") {
  // Two identical components: each node ties with its mirror.
  const Graph g = load_edge_list("0 1\n1 2\n3 4\n4 5");
  Logits l;
  l.h = Eigen::MatrixXd(6, 2);
  l.h << 0.0, 0.3, 2.0, 0.0, 2.0, 0.0, 0.0, 0.3, 2.0, 0.0, 2.0, 0.0;
  l.y_ref = reference_classes(g, kCtx, l);
  PerturbationScenario sc;
  sc.local_budget = LocalBudgetRule::explicit_values({1, 0, 0, 1, 0, 0});
  ImmunizeOptions opts;
  opts.candidate_count = 6;
  const auto run = advimmune_node(all_nodes(6), g, kCtx, l, sc, 1, opts);
  REQUIRE(run.candidates.size() == 6);
  // Isolating removals carry no gradient, so every V is zero and the ranking is by id.
  CHECK(run.candidates == std::vector<NodeId>{0, 1, 2, 3, 4, 5});
  CHECK(run.initial_gains[0] == run.initial_gains[3]);
  CHECK(run.initial_gains[0] > 0.0);
  CHECK(run.mask.protected_nodes() == std::set<NodeId>{0});
  opts.candidate_count = 2;
  CHECK_THROWS_AS(advimmune_node(all_nodes(6), g, kCtx, l, sc, 3, opts), std::invalid_argument);
}

TEST_CASE("traces are non-decreasing under exact certification") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto mode = seed % 2 ? EdgeMode::kUndirectedPair : EdgeMode::kDirectedFragile;
    const auto inst = small_instance(400 + 17 * seed, 7, mode);
    const NodeId n = inst.graph.num_nodes();
    ImmunizeOptions opts;
    opts.certify = brute();
    opts.attack_updates = 1;
    const auto e = advimmune_edge(all_nodes(n), inst.graph, kCtx, inst.logits, inst.scenario, 3, opts);
    const auto v = advimmune_node(all_nodes(n), inst.graph, kCtx, inst.logits, inst.scenario, 2, opts);
    for (const auto* run : {&e, &v}) {
      for (std::size_t i = 1; i < run->objective_trace.size(); ++i) {
        CHECK(run->objective_trace[i] >= run->objective_trace[i - 1] - 1e-12);
      }
    }
  }
}

TEST_CASE("protected pairs and nodes leave every attack") {
  const auto inst = random_instance(77, 40, 0.12, 3, 4, EdgeMode::kDirectedFragile);
  const auto targets = all_nodes(40);
  const auto e = advimmune_edge(targets, inst.graph, kCtx, inst.logits, inst.scenario, 10);
  CHECK(e.mask.edge_budget_used() == 10);
  CHECK(e.attack_update_count == 10);
  const auto v = advimmune_node(targets, inst.graph, kCtx, inst.logits, inst.scenario, 3);
  CHECK(v.mask.node_budget_used() == 3);
  CHECK(v.gain_updates.size() == 3);
  CHECK(v.objective_trace.size() == 4);
  for (const auto* run : {&e, &v}) {
    for (const auto& c : run->final_certificate.targets) {
      for (const auto& f : c.worst_delta->flips()) CHECK(!run->mask.is_protected(f.from, f.to));
    }
    CHECK(run->objective_trace.back() >= run->objective_trace.front());
  }
  for (NodeId x : v.mask.protected_nodes()) {
    CHECK(std::count(v.candidates.begin(), v.candidates.end(), x) == 1);
  }

  const auto e2 = advimmune_edge(targets, inst.graph, kCtx, inst.logits, inst.scenario, 10);
  const auto v2 = advimmune_node(targets, inst.graph, kCtx, inst.logits, inst.scenario, 3);
  CHECK(e2.mask == e.mask);
  CHECK(e2.objective_trace == e.objective_trace);
  CHECK(v2.mask == v.mask);
  CHECK(v2.objective_trace == v.objective_trace);
  CHECK(v2.gain_updates == v.gain_updates);
}

TEST_CASE("attack update schedule") {
  const auto inst = random_instance(78, 30, 0.15, 2, 4, EdgeMode::kDirectedFragile);
  ImmunizeOptions opts;
  opts.attack_updates = 2;
  const auto run = advimmune_edge(all_nodes(30), inst.graph, kCtx, inst.logits, inst.scenario, 6, opts);
  if (run.status == RunStatus::kCompleted) {
    // Updates at steps 0 and 3 plus the closing certification.
    CHECK(run.attack_updates_performed == 3);
    CHECK(run.objective_trace.size() == 3);
  }
}

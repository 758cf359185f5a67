// Serial reference vs OpenMP path for the parallel kernels.
#include <benchmark/benchmark.h>

#include "advimmune/baselines.hpp"
#include "advimmune/gradient.hpp"
#include "advimmune/harness.hpp"

namespace {

using namespace advimmune;

struct Fixture {
  Dataset ds;
  std::vector<NodeId> targets;
  CertificationResult cert;

  explicit Fixture(int n) {
    ExperimentConfig cfg;
    cfg.dataset = "sbm";
    cfg.sbm_nodes = n;
    ds = load_dataset(cfg);
    targets = all_nodes(ds.graph.num_nodes());
    cert = certify_graph(targets, ds.graph, PPRContext{}, ds.logits, PerturbationScenario{}, {});
  }
};

const Fixture& fixture() {
  static const Fixture f(200);
  return f;
}

Exec exec_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Exec::kSerial : Exec::kParallel;
}

void BM_Certify(benchmark::State& state) {
  const auto& f = fixture();
  CertifyOptions opts;
  opts.exec = exec_of(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        certify_graph(f.targets, f.ds.graph, PPRContext{}, f.ds.logits, PerturbationScenario{}, {}, opts));
  }
}

void BM_CertifyPerTarget(benchmark::State& state) {
  const auto& f = fixture();
  PerturbationScenario sc;
  sc.edge_mode = EdgeMode::kUndirectedPair;
  CertifyOptions opts;
  opts.exec = exec_of(state);
  opts.per_target = true;
  const std::vector<NodeId> some(f.targets.begin(), f.targets.begin() + 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(certify_graph(some, f.ds.graph, PPRContext{}, f.ds.logits, sc, {}, opts));
  }
}

void BM_MetaGradient(benchmark::State& state) {
  const auto& f = fixture();
  const auto attacks = attacks_from(f.cert);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        meta_gradient_node(f.ds.graph, attacks, {}, PPRContext{}, f.ds.logits, exec_of(state)));
  }
}

void BM_Betweenness(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(betweenness(f.ds.graph, exec_of(state)));
}

void BM_BruteForce(benchmark::State& state) {
  const auto inst = random_instance(7, 8, 0.4, 3, 2, EdgeMode::kDirectedFragile);
  CertifyOptions opts;
  opts.kind = CertifierKind::kBruteForce;
  opts.exec = exec_of(state);
  const auto targets = all_nodes(8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        certify_graph(targets, inst.graph, PPRContext{}, inst.logits, inst.scenario, {}, opts));
  }
}

}  // namespace

BENCHMARK(BM_Certify)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CertifyPerTarget)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MetaGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Betweenness)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BruteForce)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

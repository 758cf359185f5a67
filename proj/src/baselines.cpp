#include "advimmune/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "advimmune/error.hpp"
#include "advimmune/io.hpp"

namespace advimmune {

std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::kRandom: return "random";
    case BaselineKind::kAttackRandom: return "attack-random";
    case BaselineKind::kJaccard: return "jaccard";
    case BaselineKind::kCosine: return "cosine";
    case BaselineKind::kBridgeness: return "bridgeness";
    case BaselineKind::kBetweenness: return "betweenness";
  }
  return "unknown";
}

BaselineKind parse_baseline_kind(std::string_view name) {
  for (auto k : {BaselineKind::kRandom, BaselineKind::kAttackRandom, BaselineKind::kJaccard,
                 BaselineKind::kCosine, BaselineKind::kBridgeness, BaselineKind::kBetweenness}) {
    if (to_string(k) == name) return k;
  }
  throw UsageError("unknown baseline '" + std::string(name) + "'");
}

double attribute_jaccard(const Eigen::MatrixXd& x, NodeId a, NodeId b) {
  std::size_t both = 0, either = 0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const bool pa = x(a, c) > 0.0, pb = x(b, c) > 0.0;
    both += pa && pb;
    either += pa || pb;
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / either;
}

double attribute_cosine(const Eigen::MatrixXd& x, NodeId a, NodeId b) {
  const double na = x.row(a).norm(), nb = x.row(b).norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(x.row(a).dot(x.row(b)) / (na * nb), -1.0, 1.0);
}

double neighbor_jaccard(const Graph& g, NodeId a, NodeId b) {
  auto na = g.neighbors(a), nb = g.neighbors(b);
  std::size_t i = 0, j = 0, both = 0, either = 0;
  while (i < na.size() || j < nb.size()) {
    NodeId x;
    if (j == nb.size() || (i < na.size() && na[i] < nb[j])) {
      x = na[i++];
    } else if (i == na.size() || nb[j] < na[i]) {
      x = nb[j++];
    } else {
      x = na[i];
      ++i, ++j;
      if (x != a && x != b) ++both;
    }
    if (x != a && x != b) ++either;
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / either;
}

namespace {

// Dependencies accumulated from one BFS source (Brandes).
void accumulate_source(const Graph& g, NodeId s, std::vector<double>& out) {
  const NodeId n = g.num_nodes();
  std::vector<NodeId> order;
  std::vector<int> dist(n, -1);
  std::vector<double> sigma(n, 0.0), delta(n, 0.0);
  order.reserve(n);
  dist[s] = 0;
  sigma[s] = 1.0;
  order.push_back(s);
  for (std::size_t head = 0; head < order.size(); ++head) {
    const NodeId v = order[head];
    for (NodeId w : g.neighbors(v)) {
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        order.push_back(w);
      }
      if (dist[w] == dist[v] + 1) sigma[w] += sigma[v];
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodeId w = *it;
    for (NodeId v : g.neighbors(w)) {
      if (dist[v] == dist[w] - 1) delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
    }
    if (w != s) out[w] += delta[w];
  }
}

}  // namespace

std::vector<double> betweenness(const Graph& g, Exec exec) {
  const NodeId n = g.num_nodes();
  std::vector<double> total(n, 0.0);
  if (exec == Exec::kSerial) {
    for (NodeId s = 0; s < n; ++s) accumulate_source(g, s, total);
  } else {
    // Fixed chunks summed in order keep the result independent of thread count.
    const NodeId chunks = std::min<NodeId>(n, 64);
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(n, 0.0));
    parallel_for(chunks, exec, [&](std::int64_t c) {
      for (NodeId s = static_cast<NodeId>(c); s < n; s += chunks) accumulate_source(g, s, partial[c]);
    });
    for (const auto& p : partial) {
      for (NodeId v = 0; v < n; ++v) total[v] += p[v];
    }
  }
  for (double& b : total) b /= 2.0;
  return total;
}

SimilarityScores score_graph(SimilarityMetric metric, const Graph& g,
                             const Eigen::MatrixXd* features, Exec exec) {
  const NodeId n = g.num_nodes();
  SimilarityScores out{metric, {}, std::vector<double>(n, 0.0)};
  if (metric == SimilarityMetric::kBetweenness) {
    out.node_scores = betweenness(g, exec);
    return out;
  }
  if (metric != SimilarityMetric::kNeighborJaccard &&
      (features == nullptr || features->rows() != n)) {
    throw std::invalid_argument("score_graph: attribute metric needs one feature row per node");
  }
  for (const auto& [a, b] : g.edges()) {
    double s = 0.0;
    switch (metric) {
      case SimilarityMetric::kAttributeJaccard: s = attribute_jaccard(*features, a, b); break;
      case SimilarityMetric::kAttributeCosine: s = attribute_cosine(*features, a, b); break;
      default: s = neighbor_jaccard(g, a, b); break;
    }
    out.pair_scores[{a, b}] = s;
    out.node_scores[a] += s;
    out.node_scores[b] += s;
  }
  for (NodeId v = 0; v < n; ++v) {
    if (g.degree(v) > 0) out.node_scores[v] /= g.degree(v);
  }
  return out;
}

namespace {

std::size_t total_pairs(NodeId n) { return static_cast<std::size_t>(n) * (n - 1) / 2; }

NodePair decode_pair(std::size_t index, NodeId n) {
  NodeId a = 0;
  while (index >= static_cast<std::size_t>(n - 1 - a)) {
    index -= n - 1 - a;
    ++a;
  }
  return {a, static_cast<NodeId>(a + 1 + index)};
}

// `count` distinct values from [0, m), Floyd's algorithm.
std::vector<std::size_t> sample_indices(std::size_t m, std::size_t count, std::mt19937_64& rng) {
  count = std::min(count, m);
  std::set<std::size_t> chosen;
  for (std::size_t j = m - count; j < m; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const std::size_t t = dist(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

template <class T>
std::vector<T> sample_items(std::vector<T> items, std::size_t count, std::mt19937_64& rng) {
  if (items.size() <= count) return items;
  std::vector<T> out;
  for (std::size_t i : sample_indices(items.size(), count, rng)) out.push_back(items[i]);
  return out;
}

std::vector<NodePair> delta_pairs(const PerturbationDelta& d) {
  std::set<NodePair> s;
  for (const auto& f : d.flips()) s.insert(make_pair_key(f.from, f.to));
  return {s.begin(), s.end()};
}

// Non-edges accepted by `keep`, at most `cap`, sampled uniformly.
template <class Keep>
std::vector<NodePair> non_edge_pool(const Graph& g, std::size_t cap, std::mt19937_64& rng,
                                    Keep keep) {
  const NodeId n = g.num_nodes();
  const std::size_t m = total_pairs(n);
  std::vector<NodePair> out;
  if (m <= std::max<std::size_t>(4 * cap, 1 << 20)) {
    for (NodeId a = 0; a < n; ++a) {
      for (NodeId b = a + 1; b < n; ++b) {
        if (!g.has_edge(a, b) && keep(a, b)) out.emplace_back(a, b);
      }
    }
    return sample_items(std::move(out), cap, rng);
  }
  std::set<NodePair> seen;
  std::uniform_int_distribution<std::size_t> dist(0, m - 1);
  for (std::size_t attempt = 0; attempt < 20 * cap && seen.size() < cap; ++attempt) {
    const NodePair p = decode_pair(dist(rng), n);
    if (!g.has_edge(p.first, p.second) && keep(p.first, p.second)) seen.insert(p);
  }
  return {seen.begin(), seen.end()};
}

struct Scored {
  double score;
  NodePair pair;
};

// Highest-scoring edges and lowest-scoring non-edges, split ceil/floor.
ImmuneMask split_selection(std::vector<Scored> edges, std::vector<Scored> non_edges,
                           std::size_t budget) {
  std::stable_sort(edges.begin(), edges.end(), [](const Scored& a, const Scored& b) {
    return a.score > b.score || (a.score == b.score && a.pair < b.pair);
  });
  std::stable_sort(non_edges.begin(), non_edges.end(), [](const Scored& a, const Scored& b) {
    return a.score < b.score || (a.score == b.score && a.pair < b.pair);
  });
  std::size_t take_edges = std::min(edges.size(), (budget + 1) / 2);
  const std::size_t take_non = std::min(non_edges.size(), budget - take_edges);
  take_edges = std::min(edges.size(), budget - take_non);
  ImmuneMask mask;
  for (std::size_t i = 0; i < take_edges; ++i) mask.protect_pair(edges[i].pair.first, edges[i].pair.second);
  for (std::size_t i = 0; i < take_non; ++i) {
    mask.protect_pair(non_edges[i].pair.first, non_edges[i].pair.second);
  }
  return mask;
}

const Eigen::MatrixXd& need_features(const BaselineInputs& in, NodeId n) {
  if (in.features == nullptr || in.features->rows() != n) {
    throw std::invalid_argument("baseline needs one feature row per node");
  }
  return *in.features;
}

const std::vector<int>& need_labels(const BaselineInputs& in, NodeId n) {
  if (in.labels == nullptr || static_cast<NodeId>(in.labels->size()) != n) {
    throw std::invalid_argument("baseline needs one label per node");
  }
  return *in.labels;
}

const PerturbationDelta& need_delta(const BaselineInputs& in) {
  if (in.attack_delta == nullptr) throw std::invalid_argument("attack-random needs an attack delta");
  return *in.attack_delta;
}

}  // namespace

ImmuneMask baseline_edge(BaselineKind kind, const Graph& g, std::size_t budget,
                         const BaselineInputs& in) {
  const NodeId n = g.num_nodes();
  std::mt19937_64 rng(in.seed);
  ImmuneMask mask;
  if (budget == 0) return mask;
  switch (kind) {
    case BaselineKind::kRandom:
      for (std::size_t i : sample_indices(total_pairs(n), budget, rng)) {
        const auto [a, b] = decode_pair(i, n);
        mask.protect_pair(a, b);
      }
      return mask;
    case BaselineKind::kAttackRandom:
      for (const auto& [a, b] : sample_items(delta_pairs(need_delta(in)), budget, rng)) {
        mask.protect_pair(a, b);
      }
      return mask;
    case BaselineKind::kJaccard:
    case BaselineKind::kCosine: {
      const auto& x = need_features(in, n);
      const auto& y = need_labels(in, n);
      auto sim = kind == BaselineKind::kJaccard ? attribute_jaccard : attribute_cosine;
      std::vector<Scored> edges, non_edges;
      for (const auto& [a, b] : g.edges()) {
        if (y[a] == y[b]) edges.push_back({sim(x, a, b), {a, b}});
      }
      for (const auto& p : non_edge_pool(g, 50 * budget, rng,
                                         [&](NodeId a, NodeId b) { return y[a] != y[b]; })) {
        non_edges.push_back({sim(x, p.first, p.second), p});
      }
      return split_selection(std::move(edges), std::move(non_edges), budget);
    }
    case BaselineKind::kBridgeness: {
      std::vector<Scored> edges, non_edges;
      for (const auto& [a, b] : g.edges()) edges.push_back({neighbor_jaccard(g, a, b), {a, b}});
      for (const auto& p : non_edge_pool(g, 50 * budget, rng, [](NodeId, NodeId) { return true; })) {
        non_edges.push_back({neighbor_jaccard(g, p.first, p.second), p});
      }
      return split_selection(std::move(edges), std::move(non_edges), budget);
    }
    case BaselineKind::kBetweenness:
      break;
  }
  throw UsageError("baseline '" + std::string(to_string(kind)) + "' has no edge-level variant");
}

ImmuneMask baseline_node(BaselineKind kind, const Graph& g, std::size_t budget,
                         const BaselineInputs& in) {
  const NodeId n = g.num_nodes();
  std::mt19937_64 rng(in.seed);
  ImmuneMask mask;
  if (budget == 0) return mask;
  std::vector<double> score(n, 0.0);
  switch (kind) {
    case BaselineKind::kRandom: {
      for (std::size_t v : sample_indices(static_cast<std::size_t>(n), budget, rng)) {
        mask.protect_node(static_cast<NodeId>(v));
      }
      return mask;
    }
    case BaselineKind::kAttackRandom: {
      std::set<NodeId> touched;
      for (const auto& f : need_delta(in).flips()) {
        touched.insert(f.from);
        touched.insert(f.to);
      }
      for (NodeId v : sample_items(std::vector<NodeId>(touched.begin(), touched.end()), budget, rng)) {
        mask.protect_node(v);
      }
      return mask;
    }
    case BaselineKind::kJaccard:
    case BaselineKind::kCosine: {
      const auto& x = need_features(in, n);
      const auto& y = need_labels(in, n);
      auto sim = kind == BaselineKind::kJaccard ? attribute_jaccard : attribute_cosine;
      for (NodeId v = 0; v < n; ++v) {
        int same = 0;
        for (NodeId u : g.neighbors(v)) {
          if (y[u] != y[v]) continue;
          score[v] += sim(x, u, v);
          ++same;
        }
        if (same > 0) score[v] /= same;
      }
      break;
    }
    case BaselineKind::kBridgeness:
      score = score_graph(SimilarityMetric::kNeighborJaccard, g, nullptr).node_scores;
      break;
    case BaselineKind::kBetweenness:
      score = betweenness(g);
      break;
  }
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](NodeId a, NodeId b) { return score[a] > score[b]; });
  for (std::size_t i = 0; i < std::min<std::size_t>(budget, n); ++i) mask.protect_node(order[i]);
  return mask;
}

namespace {

Histogram make_histogram(std::string metric, std::string group, const std::vector<double>& values,
                         double lo, double hi, int bins) {
  Histogram h{std::move(metric), std::move(group), {}, std::vector<std::size_t>(bins, 0),
              values.size(), 0.0};
  for (int i = 0; i <= bins; ++i) h.bin_edges.push_back(lo + (hi - lo) * i / bins);
  for (double v : values) {
    int bin = hi > lo ? static_cast<int>(std::floor((v - lo) / (hi - lo) * bins)) : 0;
    h.counts[std::clamp(bin, 0, bins - 1)] += 1;
  }
  if (!values.empty()) h.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  return h;
}

}  // namespace

SimilarityReport similarity_report(const Graph& g, const Eigen::MatrixXd* features,
                                   const std::vector<int>* labels, const ImmuneMask& mask,
                                   int bins) {
  if (bins < 1) throw std::invalid_argument("similarity_report: bins must be >= 1");
  const NodeId n = g.num_nodes();
  const bool have_x = features != nullptr && features->rows() == n;
  const bool have_y = labels != nullptr && static_cast<NodeId>(labels->size()) == n;

  struct Series {
    std::string name;
    std::vector<double> prot, other;
  };
  std::vector<Series> pair_series{{"bridgeness", {}, {}}};
  if (have_x) pair_series.push_back({"attribute_cosine", {}, {}});
  if (have_y) pair_series.push_back({"same_label", {}, {}});

  auto pair_values = [&](NodeId a, NodeId b) {
    std::vector<double> v{neighbor_jaccard(g, a, b)};
    if (have_x) v.push_back(attribute_cosine(*features, a, b));
    if (have_y) v.push_back((*labels)[a] == (*labels)[b] ? 1.0 : 0.0);
    return v;
  };
  for (const auto& [a, b] : mask.protected_pairs()) {
    auto v = pair_values(a, b);
    for (std::size_t i = 0; i < v.size(); ++i) pair_series[i].prot.push_back(v[i]);
  }
  for (const auto& [a, b] : g.edges()) {
    if (mask.is_protected(a, b)) continue;
    auto v = pair_values(a, b);
    for (std::size_t i = 0; i < v.size(); ++i) pair_series[i].other.push_back(v[i]);
  }

  std::vector<Series> node_series{{"bridgeness", {}, {}}};
  if (have_x) node_series.push_back({"attribute_cosine", {}, {}});
  if (have_y) node_series.push_back({"same_label", {}, {}});
  for (NodeId v = 0; v < n; ++v) {
    std::vector<double> acc(node_series.size(), 0.0);
    for (NodeId u : g.neighbors(v)) {
      auto pv = pair_values(v, u);
      for (std::size_t i = 0; i < pv.size(); ++i) acc[i] += pv[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const double mean = g.degree(v) > 0 ? acc[i] / g.degree(v) : 0.0;
      (mask.node_protected(v) ? node_series[i].prot : node_series[i].other).push_back(mean);
    }
  }

  SimilarityReport out;
  for (const auto& s : pair_series) {
    const double lo = s.name == "attribute_cosine" ? -1.0 : 0.0;
    out.pairs.push_back(make_histogram(s.name, "protected", s.prot, lo, 1.0, bins));
    out.pairs.push_back(make_histogram(s.name, "other", s.other, lo, 1.0, bins));
  }
  for (const auto& s : node_series) {
    const double lo = s.name == "attribute_cosine" ? -1.0 : 0.0;
    out.nodes.push_back(make_histogram(s.name, "protected", s.prot, lo, 1.0, bins));
    out.nodes.push_back(make_histogram(s.name, "other", s.other, lo, 1.0, bins));
  }
  return out;
}

std::string SimilarityReport::to_csv(const std::vector<Histogram>& hs) {
  std::ostringstream os;
  os << "metric,group,bin_lo,bin_hi,count\n";
  for (const auto& h : hs) {
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      os << h.metric << ',' << h.group << ',' << io::format_double(h.bin_edges[i]) << ','
         << io::format_double(h.bin_edges[i + 1]) << ',' << h.counts[i] << '\n';
    }
  }
  return os.str();
}

}  // namespace advimmune

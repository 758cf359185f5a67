#include "advimmune/graph.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "advimmune/error.hpp"

namespace advimmune {

std::string_view to_string(EdgeMode mode) {
  return mode == EdgeMode::kDirectedFragile ? "directed-fragile" : "undirected-pair";
}

EdgeMode parse_edge_mode(std::string_view text) {
  if (text == "directed-fragile" || text == "directed") return EdgeMode::kDirectedFragile;
  if (text == "undirected-pair" || text == "undirected") return EdgeMode::kUndirectedPair;
  throw UsageError("unknown edge mode '" + std::string(text) + "'");
}

Graph::Graph(NodeId n) : adj_(static_cast<std::size_t>(std::max<NodeId>(n, 0))) {}

Graph Graph::from_edges(NodeId n, std::span<const NodePair> edges) {
  Graph g(n);
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) {
      throw std::invalid_argument("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                                  ") outside node range [0, " + std::to_string(n) + ")");
    }
    if (u == v) throw std::invalid_argument("self-loop on node " + std::to_string(u));
    g.adj_[u].push_back(v);
    g.adj_[v].push_back(u);
  }
  std::size_t twice = 0;
  for (auto& row : g.adj_) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    twice += row.size();
  }
  g.num_edges_ = twice / 2;
  return g;
}

std::vector<int> Graph::degrees() const {
  std::vector<int> out(adj_.size());
  for (std::size_t i = 0; i < adj_.size(); ++i) out[i] = static_cast<int>(adj_[i].size());
  return out;
}

bool Graph::has_edge(NodeId a, NodeId b) const {
  const auto& row = adj_[a];
  return std::binary_search(row.begin(), row.end(), b);
}

std::vector<NodePair> Graph::edges() const {
  std::vector<NodePair> out;
  out.reserve(num_edges_);
  for (NodeId u = 0; u < num_nodes(); ++u) {
    for (NodeId v : adj_[u]) {
      if (u < v) out.emplace_back(u, v);
    }
  }
  return out;
}

namespace {

std::uint64_t hash_rows(const std::vector<std::vector<NodeId>>& rows) {
  // FNV-1a over row lengths and entries.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t x) {
    for (int b = 0; b < 8; ++b) {
      h ^= (x >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(rows.size());
  for (const auto& row : rows) {
    mix(row.size());
    for (NodeId v : row) mix(static_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace

Digraph::Digraph(std::vector<std::vector<NodeId>> rows) : rows_(std::move(rows)) {
  for (auto& row : rows_) std::sort(row.begin(), row.end());
  fingerprint_ = hash_rows(rows_);
}

Digraph Digraph::from(const Graph& g) {
  std::vector<std::vector<NodeId>> rows(g.num_nodes());
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    auto nb = g.neighbors(v);
    rows[v].assign(nb.begin(), nb.end());
  }
  return Digraph(std::move(rows));
}

bool Digraph::has_arc(NodeId a, NodeId b) const {
  const auto& row = rows_[a];
  return std::binary_search(row.begin(), row.end(), b);
}

PerturbationDelta::PerturbationDelta(EdgeMode mode, std::vector<Flip> flips)
    : mode_(mode), flips_(std::move(flips)) {
  for (auto& f : flips_) {
    if (f.from == f.to) throw std::invalid_argument("flip on self-pair " + std::to_string(f.from));
    if (f.sign != 1 && f.sign != -1) throw std::invalid_argument("flip sign must be +1 or -1");
    if (mode_ == EdgeMode::kUndirectedPair && f.from > f.to) std::swap(f.from, f.to);
  }
  std::sort(flips_.begin(), flips_.end());
  for (std::size_t i = 1; i < flips_.size(); ++i) {
    if (flips_[i].from == flips_[i - 1].from && flips_[i].to == flips_[i - 1].to) {
      throw std::invalid_argument("pair (" + std::to_string(flips_[i].from) + ", " +
                                  std::to_string(flips_[i].to) + ") flipped twice");
    }
  }
}

PerturbationDelta PerturbationDelta::negated() const {
  std::vector<Flip> out(flips_);
  for (auto& f : out) f.sign = -f.sign;
  return PerturbationDelta(mode_, std::move(out));
}

void PerturbationDelta::validate_against(const Graph& g) const {
  for (const auto& f : flips_) {
    if (f.from < 0 || f.to < 0 || f.from >= g.num_nodes() || f.to >= g.num_nodes()) {
      throw std::invalid_argument("flip names a node outside the graph");
    }
    bool present = g.has_edge(f.from, f.to);
    if (f.sign > 0 && present) {
      throw std::invalid_argument("flip adds existing edge (" + std::to_string(f.from) + ", " +
                                  std::to_string(f.to) + ")");
    }
    if (f.sign < 0 && !present) {
      throw std::invalid_argument("flip removes absent edge (" + std::to_string(f.from) + ", " +
                                  std::to_string(f.to) + ")");
    }
  }
}

std::vector<int> PerturbationDelta::charges(NodeId n) const {
  std::vector<int> used(n, 0);
  for (const auto& f : flips_) {
    ++used[f.from];
    if (mode_ == EdgeMode::kUndirectedPair) ++used[f.to];
  }
  return used;
}

Graph apply_delta(const Graph& g, const PerturbationDelta& d) {
  if (d.mode() != EdgeMode::kUndirectedPair) {
    throw std::invalid_argument("apply_delta needs an undirected delta; use perturb()");
  }
  d.validate_against(g);
  std::vector<std::vector<NodeId>> rows(g.num_nodes());
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    auto nb = g.neighbors(v);
    rows[v].assign(nb.begin(), nb.end());
  }
  for (const auto& f : d.flips()) {
    if (f.sign > 0) {
      rows[f.from].push_back(f.to);
      rows[f.to].push_back(f.from);
    } else {
      std::erase(rows[f.from], f.to);
      std::erase(rows[f.to], f.from);
    }
  }
  std::vector<NodePair> edges;
  for (NodeId u = 0; u < g.num_nodes(); ++u) {
    for (NodeId v : rows[u]) {
      if (u < v) edges.emplace_back(u, v);
    }
  }
  return Graph::from_edges(g.num_nodes(), edges);
}

Digraph perturb(const Graph& g, const PerturbationDelta& d) {
  std::vector<std::vector<NodeId>> rows(g.num_nodes());
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    auto nb = g.neighbors(v);
    rows[v].assign(nb.begin(), nb.end());
  }
  auto toggle = [&rows](NodeId a, NodeId b, int sign) {
    if (sign > 0) {
      rows[a].push_back(b);
    } else {
      std::erase(rows[a], b);
    }
  };
  for (const auto& f : d.flips()) {
    toggle(f.from, f.to, f.sign);
    if (d.mode() == EdgeMode::kUndirectedPair) toggle(f.to, f.from, f.sign);
  }
  return Digraph(std::move(rows));
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_int(std::string_view tok, long long& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc{} && res.ptr == tok.data() + tok.size();
}

struct RawEdges {
  long long header_n = -1;
  std::vector<std::pair<long long, long long>> pairs;
};

RawEdges parse_raw(std::string_view text) {
  RawEdges raw;
  std::size_t line_no = 0;
  bool seen_content = false;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (!seen_content && line.starts_with("n=")) {
      seen_content = true;
      long long n = 0;
      if (!parse_int(trim(line.substr(2)), n) || n < 0) {
        throw ParseError("bad node-count header '" + std::string(line) + "'", line_no);
      }
      if (n > std::numeric_limits<NodeId>::max()) throw ParseError("node count overflows", line_no);
      raw.header_n = n;
      continue;
    }
    seen_content = true;
    auto sep = line.find_first_of(" \t,");
    if (sep == std::string_view::npos) throw ParseError("expected two node ids", line_no);
    auto a = trim(line.substr(0, sep));
    auto b = trim(line.substr(sep + 1));
    long long u = 0, v = 0;
    if (!parse_int(a, u) || !parse_int(b, v)) {
      throw ParseError("malformed edge '" + std::string(line) + "'", line_no);
    }
    if (u < 0 || v < 0) throw ParseError("negative node id", line_no);
    if (u > std::numeric_limits<NodeId>::max() - 1 || v > std::numeric_limits<NodeId>::max() - 1) {
      throw ParseError("node id overflows", line_no);
    }
    if (u == v) throw ParseError("self-loop on node " + std::to_string(u), line_no);
    if (raw.header_n >= 0 && (u >= raw.header_n || v >= raw.header_n)) {
      throw ParseError("node id exceeds declared n=" + std::to_string(raw.header_n), line_no);
    }
    raw.pairs.emplace_back(u, v);
  }
  return raw;
}

}  // namespace

Graph load_edge_list(std::string_view text) {
  RawEdges raw = parse_raw(text);
  long long n = std::max<long long>(raw.header_n, 0);
  std::vector<NodePair> edges;
  edges.reserve(raw.pairs.size());
  for (auto [u, v] : raw.pairs) {
    n = std::max({n, u + 1, v + 1});
    edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
  }
  return Graph::from_edges(static_cast<NodeId>(n), edges);
}

RemappedGraph load_edge_list_remapped(std::string_view text) {
  RawEdges raw = parse_raw(text);
  std::map<long long, NodeId> index;
  RemappedGraph out;
  auto id_of = [&](long long x) {
    auto [it, inserted] = index.emplace(x, static_cast<NodeId>(out.original_ids.size()));
    if (inserted) out.original_ids.push_back(x);
    return it->second;
  };
  std::vector<NodePair> edges;
  for (auto [u, v] : raw.pairs) {
    const NodeId a = id_of(u);
    const NodeId b = id_of(v);
    edges.emplace_back(a, b);
  }
  NodeId n = static_cast<NodeId>(out.original_ids.size());
  if (raw.header_n > n) {
    // Declared isolated nodes keep ids not mentioned by any edge.
    for (long long x = 0; static_cast<long long>(out.original_ids.size()) < raw.header_n; ++x) {
      if (!index.contains(x)) id_of(x);
    }
    n = static_cast<NodeId>(out.original_ids.size());
  }
  out.graph = Graph::from_edges(n, edges);
  return out;
}

std::string to_edge_list(const Graph& g) {
  std::ostringstream os;
  os << "n=" << g.num_nodes() << '\n';
  for (auto [u, v] : g.edges()) os << u << ' ' << v << '\n';
  return os.str();
}

Graph karate() {
  static constexpr NodePair kEdges[] = {
      {0, 1},   {0, 2},   {0, 3},   {0, 4},   {0, 5},   {0, 6},   {0, 7},   {0, 8},
      {0, 10},  {0, 11},  {0, 12},  {0, 13},  {0, 17},  {0, 19},  {0, 21},  {0, 31},
      {1, 2},   {1, 3},   {1, 7},   {1, 13},  {1, 17},  {1, 19},  {1, 21},  {1, 30},
      {2, 3},   {2, 7},   {2, 8},   {2, 9},   {2, 13},  {2, 27},  {2, 28},  {2, 32},
      {3, 7},   {3, 12},  {3, 13},  {4, 6},   {4, 10},  {5, 6},   {5, 10},  {5, 16},
      {6, 16},  {8, 30},  {8, 32},  {8, 33},  {9, 33},  {13, 33}, {14, 32}, {14, 33},
      {15, 32}, {15, 33}, {18, 32}, {18, 33}, {19, 33}, {20, 32}, {20, 33}, {22, 32},
      {22, 33}, {23, 25}, {23, 27}, {23, 29}, {23, 32}, {23, 33}, {24, 25}, {24, 27},
      {24, 31}, {25, 31}, {26, 29}, {26, 33}, {27, 33}, {28, 31}, {28, 33}, {29, 32},
      {29, 33}, {30, 32}, {30, 33}, {31, 32}, {31, 33}, {32, 33}};
  return Graph::from_edges(34, kEdges);
}

std::vector<int> karate_factions() {
  return {0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0,
          0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
}

}  // namespace advimmune

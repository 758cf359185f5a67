#include "advimmune/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "advimmune/error.hpp"
#include "advimmune/gradient.hpp"
#include "advimmune/io.hpp"

namespace advimmune {

namespace {

using json = nlohmann::ordered_json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  T value{};
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw UsageError("invalid value for '" + std::string(key) + "': '" + t + "'");
  }
  return value;
}

std::optional<int> parse_optional_int(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  if (t.empty() || t == "none" || t == "default") return std::nullopt;
  return parse_number<int>(key, t);
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw UsageError("invalid value for '" + std::string(key) + "': '" + t + "'");
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto end = pos == std::string_view::npos ? s.size() : pos;
    out.push_back(trim(s.substr(start, end - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool is_baseline(const std::string& method) { return method.rfind("baseline:", 0) == 0; }

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  if (key == "dataset") dataset = v;
  else if (key == "edges") edges = v;
  else if (key == "features") features = v;
  else if (key == "labels") labels = v;
  else if (key == "logits") logits = v;
  else if (key == "alpha") alpha = parse_number<double>(key, v);
  else if (key == "solver") solver = v;
  else if (key == "budget_offset") budget_offset = parse_number<int>(key, v);
  else if (key == "uniform_budget") uniform_budget = parse_optional_int(key, v);
  else if (key == "global_budget") global_budget = parse_optional_int(key, v);
  else if (key == "edge_mode") {
    try {
      edge_mode = parse_edge_mode(v);
    } catch (const std::exception&) {
      throw UsageError("invalid value for 'edge_mode': '" + v + "'");
    }
  }
  else if (key == "method") method = v;
  else if (key == "level") level = v;
  else if (key == "budget") budget = v;
  else if (key == "attack_updates") attack_updates = parse_optional_int(key, v);
  else if (key == "candidate_count") candidate_count = parse_optional_int(key, v);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
  else if (key == "targets") targets = v;
  else if (key == "certifier") certifier = v;
  else if (key == "per_target") per_target = parse_bool(key, v);
  else if (key == "output") output = v;
  else if (key == "mask") mask = v;
  else if (key == "epochs") epochs = parse_number<int>(key, v);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, v);
  else if (key == "train_fraction") train_fraction = parse_number<double>(key, v);
  else if (key == "sbm_nodes") sbm_nodes = parse_number<int>(key, v);
  else if (key == "sbm_p_in") sbm_p_in = parse_number<double>(key, v);
  else if (key == "sbm_p_out") sbm_p_out = parse_number<double>(key, v);
  else if (key == "feature_dims") feature_dims = parse_number<int>(key, v);
  else throw UsageError("unknown configuration key '" + std::string(key) + "'");
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig cfg;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected `key = value`");
    }
    try {
      cfg.set(trim(std::string_view(line).substr(0, eq)), std::string_view(line).substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError(msg); };
  if (dataset != "karate" && dataset != "sbm" && dataset != "files") {
    fail("dataset must be karate, sbm or files");
  }
  if (dataset == "files" && edges.empty()) fail("dataset 'files' needs an edges path");
  if (dataset == "files" && logits.empty() && (features.empty() || labels.empty())) {
    fail("dataset 'files' needs logits, or features and labels to train on");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (solver != "auto" && solver != "dense" && solver != "power") fail("solver must be auto, dense or power");
  if (budget_offset < 0) fail("budget_offset must be >= 0");
  if (uniform_budget && *uniform_budget < 0) fail("uniform_budget must be >= 0");
  if (global_budget && *global_budget < 0) fail("global_budget must be >= 0");
  if (method != "advimmune-edge" && method != "advimmune-node" && method != "none") {
    if (!is_baseline(method)) fail("unknown method '" + method + "'");
    const auto kind = parse_baseline_kind(method.substr(9));
    if (level == "edge" && kind == BaselineKind::kBetweenness) {
      fail("the betweenness baseline is node-level only");
    }
  }
  if (level != "edge" && level != "node") fail("level must be edge or node");
  for (const auto& b : split(budget, ',')) resolve_budget(b, true, 1);
  if (attack_updates && *attack_updates < 1) fail("attack_updates must be >= 1");
  if (candidate_count && *candidate_count < 1) fail("candidate_count must be >= 1");
  if (certifier != "policy-iteration" && certifier != "brute-force") {
    fail("certifier must be policy-iteration or brute-force");
  }
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) fail("train_fraction must lie in (0, 1]");
  if (sbm_nodes < 2) fail("sbm_nodes must be >= 2");
  if (!(sbm_p_in >= 0.0 && sbm_p_in <= 1.0 && sbm_p_out >= 0.0 && sbm_p_out <= 1.0)) {
    fail("sbm probabilities must lie in [0, 1]");
  }
  if (feature_dims < 2) fail("feature_dims must be >= 2");
}

json ExperimentConfig::to_json() const {
  auto opt = [](const std::optional<int>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"dataset", dataset},
              {"edges", edges},
              {"features", features},
              {"labels", labels},
              {"logits", logits},
              {"alpha", alpha},
              {"solver", solver},
              {"budget_offset", budget_offset},
              {"uniform_budget", opt(uniform_budget)},
              {"global_budget", opt(global_budget)},
              {"edge_mode", std::string(to_string(edge_mode))},
              {"method", method},
              {"level", level},
              {"budget", budget},
              {"attack_updates", opt(attack_updates)},
              {"candidate_count", opt(candidate_count)},
              {"seed", seed},
              {"targets", targets},
              {"certifier", certifier},
              {"per_target", per_target},
              {"mask", mask},
              {"epochs", epochs},
              {"learning_rate", learning_rate},
              {"train_fraction", train_fraction},
              {"sbm_nodes", sbm_nodes},
              {"sbm_p_in", sbm_p_in},
              {"sbm_p_out", sbm_p_out},
              {"feature_dims", feature_dims}};
}

Graph two_block_sbm(NodeId n, double p_in, double p_out, std::uint64_t seed,
                    std::vector<int>* blocks) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> block(n);
  for (NodeId v = 0; v < n; ++v) block[v] = v < n / 2 ? 0 : 1;
  std::vector<NodePair> edges;
  for (NodeId a = 0; a < n; ++a) {
    for (NodeId b = a + 1; b < n; ++b) {
      if (u(rng) < (block[a] == block[b] ? p_in : p_out)) edges.emplace_back(a, b);
    }
  }
  if (blocks != nullptr) *blocks = block;
  return Graph::from_edges(n, edges);
}

Eigen::MatrixXd block_features(const std::vector<int>& blocks, int dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(blocks.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, dims);
  for (Eigen::Index v = 0; v < n; ++v) {
    for (int c = 0; c < dims; ++c) {
      const bool preferred = (c < dims / 2) == (blocks[v] == 0);
      x(v, c) = u(rng) < (preferred ? 0.3 : 0.1) ? 1.0 : 0.0;
    }
  }
  return x;
}

std::vector<char> stratified_train_mask(const std::vector<int>& labels, double fraction,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<int, std::vector<NodeId>> by_class;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (labels[v] >= 0) by_class[labels[v]].push_back(static_cast<NodeId>(v));
  }
  std::vector<char> mask(labels.size(), 0);
  for (auto& [c, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(fraction * members.size())), 1, members.size());
    for (std::size_t i = 0; i < take; ++i) mask[members[i]] = 1;
  }
  return mask;
}

PPRContext context_of(const ExperimentConfig& cfg) {
  PPRContext ctx;
  ctx.alpha = cfg.alpha;
  if (cfg.solver == "dense") ctx.solver = SolverKind::kDenseExact;
  if (cfg.solver == "power") ctx.solver = SolverKind::kPowerIteration;
  return ctx;
}

PerturbationScenario scenario_of(const ExperimentConfig& cfg) {
  PerturbationScenario sc;
  sc.local_budget = cfg.uniform_budget ? LocalBudgetRule::uniform(*cfg.uniform_budget)
                                       : LocalBudgetRule::degree_offset(cfg.budget_offset);
  sc.global_budget = cfg.global_budget;
  sc.edge_mode = cfg.edge_mode;
  return sc;
}

CertifyOptions certify_options_of(const ExperimentConfig& cfg) {
  CertifyOptions opts;
  opts.kind = cfg.certifier == "brute-force" ? CertifierKind::kBruteForce
                                             : CertifierKind::kPolicyIteration;
  opts.per_target = cfg.per_target;
  return opts;
}

namespace {

std::string read_input(const std::string& path, const char* what) {
  try {
    return io::read_file(path);
  } catch (const ParseError&) {
    throw Error(ExitCode::kData, std::string("cannot read ") + what + " file '" + path + "'");
  }
}

void train_into(Dataset& ds, const ExperimentConfig& cfg, const PPRContext& ctx) {
  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.lr = cfg.learning_rate;
  opts.seed = cfg.seed;
  auto result = train_linear(ds.features, opts);
  ds.logits = std::move(result.logits);
  ds.train_accuracy = result.train_accuracy;
  ds.logits.y_ref = reference_classes(ds.graph, ctx, ds.logits);
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  const PPRContext ctx = context_of(cfg);
  Dataset ds;
  ds.name = cfg.dataset;
  if (cfg.dataset == "karate") {
    ds.graph = karate();
    ds.features.x = Eigen::MatrixXd::Identity(34, 34);
    ds.features.labels = karate_factions();
    ds.features.train_mask = stratified_train_mask(ds.features.labels, cfg.train_fraction, cfg.seed);
    train_into(ds, cfg, ctx);
    return ds;
  }
  if (cfg.dataset == "sbm") {
    std::vector<int> blocks;
    ds.graph = two_block_sbm(cfg.sbm_nodes, cfg.sbm_p_in, cfg.sbm_p_out, cfg.seed, &blocks);
    ds.features.x = block_features(blocks, cfg.feature_dims, cfg.seed + 1);
    ds.features.labels = blocks;
    ds.features.train_mask = stratified_train_mask(blocks, cfg.train_fraction, cfg.seed + 2);
    train_into(ds, cfg, ctx);
    return ds;
  }
  ds.graph = load_edge_list(read_input(cfg.edges, "edges"));
  const NodeId n = ds.graph.num_nodes();
  if (!cfg.features.empty()) {
    ds.features.x = load_features(read_input(cfg.features, "features"));
    if (ds.features.x.rows() != n) {
      throw DimensionError("features have " + std::to_string(ds.features.x.rows()) +
                           " rows but the graph has " + std::to_string(n) + " nodes");
    }
  }
  if (!cfg.labels.empty()) ds.features.labels = load_labels(read_input(cfg.labels, "labels"), n);
  if (!cfg.logits.empty()) {
    const std::string text = read_input(cfg.logits, "logits");
    const auto rows = io::parse_numeric_csv(text);
    ds.logits = load_logits(text, rows.empty() ? 0 : static_cast<int>(rows.front().size()));
    ds.logits.validate(n);
    ds.logits.y_ref = reference_classes(ds.graph, ctx, ds.logits);
    return ds;
  }
  ds.features.train_mask = stratified_train_mask(ds.features.labels, cfg.train_fraction, cfg.seed);
  train_into(ds, cfg, ctx);
  return ds;
}

std::size_t resolve_budget(std::string_view spec, bool edge_level, NodeId n) {
  std::string s = trim(spec);
  if (s.empty()) throw UsageError("empty budget");
  double fraction = -1.0;
  if (s.back() == '%') {
    fraction = parse_number<double>("budget", s.substr(0, s.size() - 1)) / 100.0;
  } else if (s.find_first_of(".eE") != std::string::npos) {
    fraction = parse_number<double>("budget", s);
  } else {
    const auto v = parse_number<long long>("budget", s);
    if (v < 0) throw UsageError("budget must be >= 0");
    return static_cast<std::size_t>(v);
  }
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw UsageError("budget fraction must lie in [0, 1]");
  if (fraction == 0.0) return 0;
  const double base = edge_level ? static_cast<double>(n) * n : static_cast<double>(n);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * base)));
}

std::vector<NodeId> resolve_targets(std::string_view spec, const Dataset& ds) {
  const NodeId n = ds.graph.num_nodes();
  const std::string s = trim(spec);
  std::vector<NodeId> out;
  if (s == "all") return all_nodes(n);
  if (s == "train" || s == "test") {
    if (ds.features.train_mask.empty()) throw UsageError("targets '" + s + "' need a training mask");
    const char want = s == "train" ? 1 : 0;
    for (NodeId v = 0; v < n; ++v) {
      if (ds.features.train_mask[v] == want) out.push_back(v);
    }
  } else {
    for (const auto& item : split(s, ',')) {
      const int v = parse_number<int>("targets", item);
      if (v < 0 || v >= n) throw UsageError("target " + item + " outside graph");
      out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }
  if (out.empty()) throw UsageError("target set is empty");
  return out;
}

double robust_ratio(const CertificationResult& cert, std::span<const NodeId> targets) {
  if (targets.empty()) throw std::invalid_argument("robust_ratio: empty target set");
  std::size_t robust = 0;
  for (NodeId t : targets) {
    const auto* c = cert.find(t);
    if (c != nullptr && c->robust) ++robust;
  }
  return static_cast<double>(robust) / static_cast<double>(targets.size());
}

PerturbationDelta attack_union(const CertificationResult& cert, EdgeMode mode) {
  std::set<Flip> flips;
  std::set<NodePair> pairs;
  for (const auto& c : cert.targets) {
    if (!c.worst_delta) continue;
    for (const auto& f : c.worst_delta->flips()) {
      if (mode == EdgeMode::kUndirectedPair && !pairs.insert(make_pair_key(f.from, f.to)).second) {
        continue;
      }
      flips.insert(f);
    }
  }
  return PerturbationDelta(mode, {flips.begin(), flips.end()});
}

std::string margins_csv(const CertificationResult& cert) {
  std::ostringstream os;
  os << "node,worst_margin,worst_class,robust\n";
  for (const auto& c : cert.targets) {
    os << c.node << ',' << io::format_double(c.worst_margin) << ',' << c.worst_class << ','
       << (c.robust ? 1 : 0) << '\n';
  }
  return os.str();
}

json certificate_json(const CertificationResult& cert) {
  std::map<const PerturbationDelta*, std::size_t> index;
  json deltas = json::array();
  json targets = json::array();
  for (const auto& c : cert.targets) {
    json entry{{"node", c.node}, {"worst_margin", c.worst_margin}, {"worst_class", c.worst_class},
               {"robust", c.robust}, {"converged", c.converged}, {"delta", nullptr}};
    if (c.worst_delta) {
      auto [it, inserted] = index.try_emplace(c.worst_delta.get(), deltas.size());
      if (inserted) {
        json flips = json::array();
        for (const auto& f : c.worst_delta->flips()) flips.push_back({f.from, f.to, f.sign});
        deltas.push_back(std::move(flips));
      }
      entry["delta"] = it->second;
    }
    targets.push_back(std::move(entry));
  }
  return json{{"targets", std::move(targets)}, {"deltas", std::move(deltas)}};
}

json mask_json(const ImmuneMask& mask, std::size_t budget, const std::vector<double>& trace) {
  json pairs = json::array();
  for (const auto& [a, b] : mask.protected_pairs()) pairs.push_back({a, b});
  return json{{"protected_pairs", std::move(pairs)},
              {"protected_nodes", mask.protected_nodes()},
              {"budget", budget},
              {"trace", trace}};
}

ImmuneMask parse_mask_json(std::string_view text) {
  ImmuneMask mask;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& p : j.value("protected_pairs", nlohmann::json::array())) {
      mask.protect_pair(p.at(0).get<NodeId>(), p.at(1).get<NodeId>());
    }
    for (const auto& v : j.value("protected_nodes", nlohmann::json::array())) {
      mask.protect_node(v.get<NodeId>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("mask: ") + e.what());
  }
  return mask;
}

void Report::write(const std::filesystem::path& dir) const {
  io::write_file_atomic(dir / "report.json", json.dump(2) + "\n");
  for (const auto& [name, content] : files) io::write_file_atomic(dir / name, content);
}

namespace {

double mean_margin(const CertificationResult& cert) {
  return cert.targets.empty() ? 0.0 : cert.total_margin() / static_cast<double>(cert.targets.size());
}

void check_mask_nodes(const ImmuneMask& mask, NodeId n) {
  for (const auto& [a, b] : mask.protected_pairs()) {
    if (a < 0 || b >= n || a == b) throw DimensionError("mask pair outside graph");
  }
  for (NodeId v : mask.protected_nodes()) {
    if (v < 0 || v >= n) throw DimensionError("mask node outside graph");
  }
}

ImmuneMask load_mask(const ExperimentConfig& cfg, NodeId n) {
  if (cfg.mask.empty()) return {};
  auto mask = parse_mask_json(read_input(cfg.mask, "mask"));
  check_mask_nodes(mask, n);
  return mask;
}

json dataset_json(const Dataset& ds) {
  return json{{"name", ds.name},
              {"nodes", ds.graph.num_nodes()},
              {"edges", ds.graph.num_edges()},
              {"classes", ds.logits.num_classes()},
              {"train_accuracy", ds.train_accuracy}};
}

json scenario_json(const ExperimentConfig& cfg, const PerturbationScenario& sc) {
  return json{{"alpha", cfg.alpha},
              {"threat_model", "remove-add"},
              {"local_budget", sc.local_budget.describe()},
              {"global_budget", sc.global_budget ? json(*sc.global_budget) : json(nullptr)},
              {"edge_mode", std::string(to_string(sc.edge_mode))},
              {"certifier", cfg.certifier},
              {"robust_if", "worst-case margin > 0 against the clean prediction"},
              {"tie_break", "smallest class, node id, then lexicographic pair"},
              {"edge_budget_base", "all n^2 node pairs"},
              {"pair_budget_unit", "one unordered pair"}};
}

json certification_summary(const CertificationResult& cert, std::span<const NodeId> targets) {
  return json{{"robust", cert.robust_count()},
              {"robust_ratio", robust_ratio(cert, targets)},
              {"avg_worst_margin", mean_margin(cert)},
              {"converged", cert.all_converged()}};
}

// Targets whose worst margin dropped although the mask only grew.
json gap_warnings(const CertificationResult& before, const CertificationResult& after) {
  json out = json::array();
  for (const auto& a : after.targets) {
    const auto* b = before.find(a.node);
    if (b != nullptr && a.worst_margin < b->worst_margin - 1e-9) {
      out.push_back({{"node", a.node}, {"before", b->worst_margin}, {"after", a.worst_margin}});
    }
  }
  return out;
}

std::string trace_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os << "step,objective\n";
  for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << io::format_double(trace[i]) << '\n';
  return os.str();
}

void add_histograms(Report& r, const Dataset& ds, const ImmuneMask& mask) {
  const Eigen::MatrixXd* x = ds.features.x.size() > 0 ? &ds.features.x : nullptr;
  const std::vector<int>* y =
      ds.features.labels.empty() ? &ds.logits.y_ref : &ds.features.labels;
  const auto rep = similarity_report(ds.graph, x, y, mask);
  r.files["histograms/pairs.csv"] = SimilarityReport::to_csv(rep.pairs);
  r.files["histograms/nodes.csv"] = SimilarityReport::to_csv(rep.nodes);
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

Report run_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset ds = load_dataset(cfg);
  const auto targets = resolve_targets(cfg.targets, ds);
  const auto ctx = context_of(cfg);
  const auto sc = scenario_of(cfg);
  ImmunizeOptions opts;
  opts.certify = certify_options_of(cfg);
  opts.attack_updates = cfg.attack_updates;
  opts.candidate_count = cfg.candidate_count;
  const NodeId n = ds.graph.num_nodes();

  const auto before = certify_graph(targets, ds.graph, ctx, ds.logits, sc, {}, opts.certify);
  const bool node_level = cfg.method == "advimmune-node" || (is_baseline(cfg.method) && cfg.level == "node");

  Report report;
  json runs = json::array();
  ImmuneMask last_mask;
  CertificationResult last_after = before;
  std::vector<double> last_trace{before.total_margin()};
  std::size_t last_budget = 0;
  for (const auto& spec : split(cfg.budget, ',')) {
    const std::size_t budget = resolve_budget(spec, !node_level, n);
    ImmuneMask mask;
    std::vector<double> trace;
    json extra = json::object();
    if (cfg.method == "advimmune-edge" || cfg.method == "advimmune-node") {
      auto run = cfg.method == "advimmune-edge"
                     ? advimmune_edge(targets, ds.graph, ctx, ds.logits, sc, budget, opts)
                     : advimmune_node(targets, ds.graph, ctx, ds.logits, sc, budget, opts);
      mask = run.mask;
      trace = run.objective_trace;
      extra = json{{"status", std::string(to_string(run.status))},
                   {"message", run.message},
                   {"attack_update_interval_count", run.attack_update_count},
                   {"attack_updates_performed", run.attack_updates_performed},
                   {"candidates", run.candidates},
                   {"gain_updates", run.gain_updates}};
    } else if (is_baseline(cfg.method)) {
      const auto kind = parse_baseline_kind(cfg.method.substr(9));
      const auto delta = attack_union(before, sc.edge_mode);
      BaselineInputs in;
      if (ds.features.x.size() > 0) in.features = &ds.features.x;
      in.labels = ds.features.labels.empty() ? &ds.logits.y_ref : &ds.features.labels;
      in.attack_delta = &delta;
      in.seed = cfg.seed;
      mask = node_level ? baseline_node(kind, ds.graph, budget, in)
                        : baseline_edge(kind, ds.graph, budget, in);
    }
    const auto after = certify_graph(targets, ds.graph, ctx, ds.logits, sc, mask, opts.certify);
    if (trace.empty()) trace = {before.total_margin(), after.total_margin()};
    json entry{{"budget_spec", spec},
               {"budget", budget},
               {"protected_pairs", mask.edge_budget_used()},
               {"protected_nodes", mask.node_budget_used()},
               {"after", certification_summary(after, targets)},
               {"objective_trace", trace},
               {"certification_gap_warnings", gap_warnings(before, after)}};
    entry.update(extra);
    runs.push_back(std::move(entry));
    last_mask = std::move(mask);
    last_after = after;
    last_trace = std::move(trace);
    last_budget = budget;
  }

  report.json = json{{"version", kVersion},
                     {"command", "run"},
                     {"config", cfg.to_json()},
                     {"dataset", dataset_json(ds)},
                     {"scenario", scenario_json(cfg, sc)},
                     {"method", cfg.method},
                     {"targets", targets.size()},
                     {"robust_ratio_before", robust_ratio(before, targets)},
                     {"robust_ratio_after", robust_ratio(last_after, targets)},
                     {"avg_worst_margin_before", mean_margin(before)},
                     {"avg_worst_margin_after", mean_margin(last_after)},
                     {"converged_before", before.all_converged()},
                     {"converged_after", last_after.all_converged()},
                     {"runs", std::move(runs)},
                     {"files", {"margins_before.csv", "margins_after.csv", "mask.json", "trace.csv",
                                "certificate_before.json", "certificate_after.json",
                                "histograms/pairs.csv", "histograms/nodes.csv"}},
                     {"wall_clock_seconds", 0.0}};
  report.files["margins_before.csv"] = margins_csv(before);
  report.files["margins_after.csv"] = margins_csv(last_after);
  report.files["mask.json"] = mask_json(last_mask, last_budget, last_trace).dump(2) + "\n";
  report.files["trace.csv"] = trace_csv(last_trace);
  report.files["certificate_before.json"] = certificate_json(before).dump() + "\n";
  report.files["certificate_after.json"] = certificate_json(last_after).dump() + "\n";
  add_histograms(report, ds, last_mask);
  report.json["wall_clock_seconds"] = elapsed_seconds(start);
  return report;
}

Report certify_command(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset ds = load_dataset(cfg);
  const auto targets = resolve_targets(cfg.targets, ds);
  const auto sc = scenario_of(cfg);
  const auto mask = load_mask(cfg, ds.graph.num_nodes());
  const auto cert = certify_graph(targets, ds.graph, context_of(cfg), ds.logits, sc, mask,
                                  certify_options_of(cfg));
  Report r;
  r.json = json{{"version", kVersion},
                {"command", "certify"},
                {"config", cfg.to_json()},
                {"dataset", dataset_json(ds)},
                {"scenario", scenario_json(cfg, sc)},
                {"targets", targets.size()},
                {"certification", certification_summary(cert, targets)},
                {"files", {"margins.csv", "certificate.json"}},
                {"wall_clock_seconds", elapsed_seconds(start)}};
  r.files["margins.csv"] = margins_csv(cert);
  r.files["certificate.json"] = certificate_json(cert).dump() + "\n";
  return r;
}

Report evaluate_command(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (cfg.mask.empty()) throw UsageError("evaluate needs a mask");
  const Dataset ds = load_dataset(cfg);
  const auto targets = resolve_targets(cfg.targets, ds);
  const auto ctx = context_of(cfg);
  const auto sc = scenario_of(cfg);
  const auto opts = certify_options_of(cfg);
  const auto mask = load_mask(cfg, ds.graph.num_nodes());
  const auto before = certify_graph(targets, ds.graph, ctx, ds.logits, sc, {}, opts);
  const auto after = certify_graph(targets, ds.graph, ctx, ds.logits, sc, mask, opts);
  Report r;
  r.json = json{{"version", kVersion},
                {"command", "evaluate"},
                {"config", cfg.to_json()},
                {"dataset", dataset_json(ds)},
                {"scenario", scenario_json(cfg, sc)},
                {"targets", targets.size()},
                {"protected_pairs", mask.edge_budget_used()},
                {"protected_nodes", mask.node_budget_used()},
                {"robust_ratio_before", robust_ratio(before, targets)},
                {"robust_ratio_after", robust_ratio(after, targets)},
                {"avg_worst_margin_before", mean_margin(before)},
                {"avg_worst_margin_after", mean_margin(after)},
                {"certification_gap_warnings", gap_warnings(before, after)},
                {"files", {"margins_before.csv", "margins_after.csv"}},
                {"wall_clock_seconds", elapsed_seconds(start)}};
  r.files["margins_before.csv"] = margins_csv(before);
  r.files["margins_after.csv"] = margins_csv(after);
  return r;
}

Report report_command(const ExperimentConfig& cfg) {
  if (cfg.mask.empty()) throw UsageError("report needs a mask");
  const Dataset ds = load_dataset(cfg);
  const auto mask = load_mask(cfg, ds.graph.num_nodes());
  Report r;
  add_histograms(r, ds, mask);
  r.json = json{{"version", kVersion},
                {"command", "report"},
                {"config", cfg.to_json()},
                {"dataset", dataset_json(ds)},
                {"protected_pairs", mask.edge_budget_used()},
                {"protected_nodes", mask.node_budget_used()},
                {"files", {"histograms/pairs.csv", "histograms/nodes.csv"}}};
  return r;
}

RandomInstance random_instance(std::uint64_t seed, NodeId n, double p, int k, int max_budget,
                               EdgeMode mode) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<NodePair> edges;
  for (NodeId a = 0; a < n; ++a) {
    for (NodeId b = a + 1; b < n; ++b) {
      if (u(rng) < p) edges.emplace_back(a, b);
    }
  }
  RandomInstance inst;
  inst.graph = Graph::from_edges(n, edges);
  inst.logits.h = Eigen::MatrixXd(n, k);
  for (NodeId v = 0; v < n; ++v) {
    for (int c = 0; c < k; ++c) inst.logits.h(v, c) = normal(rng);
  }
  std::vector<int> budgets(n);
  std::uniform_int_distribution<int> b(0, max_budget);
  for (auto& x : budgets) x = b(rng);
  inst.scenario.local_budget = LocalBudgetRule::explicit_values(budgets);
  inst.scenario.edge_mode = mode;
  inst.logits.y_ref = reference_classes(inst.graph, PPRContext{}, inst.logits);
  return inst;
}

json GradcheckSummary::to_json() const {
  return json{{"gradient_cases", gradient_cases},
              {"max_relative_error", max_relative_error},
              {"gradient_pass", gradient_pass},
              {"oracle_cases", oracle_cases},
              {"oracle_skipped", oracle_skipped},
              {"oracle_mismatches", oracle_mismatches},
              {"oracle_max_gap", oracle_max_gap},
              {"oracle_pass", oracle_pass},
              {"notices", notices},
              {"pass", pass()}};
}

GradcheckSummary gradcheck(const GradcheckOptions& opts) {
  if (opts.max_nodes < 2 || opts.instances < 0 || opts.oracle_instances < 0) {
    throw UsageError("gradcheck: invalid sweep sizes");
  }
  if (!(opts.step > 0.0)) throw UsageError("gradcheck: step must be positive");
  GradcheckSummary s;
  const PPRContext ctx;
  std::mt19937_64 rng(opts.seed);
  for (int i = 0; i < opts.instances; ++i) {
    const NodeId n = std::uniform_int_distribution<NodeId>(2, opts.max_nodes)(rng);
    const int k = std::uniform_int_distribution<int>(2, 3)(rng);
    auto inst = random_instance(rng(), n, 0.35, k, 0, opts.edge_mode);
    const NodeId t = std::uniform_int_distribution<NodeId>(0, n - 1)(rng);
    int other = std::uniform_int_distribution<int>(0, k - 2)(rng);
    if (other >= inst.logits.y_ref[t]) ++other;
    const double err = finite_diff_check(t, other, Digraph::from(inst.graph), ctx, inst.logits,
                                         opts.step, opts.form);
    s.max_relative_error = std::max(s.max_relative_error, err);
    ++s.gradient_cases;
  }
  s.gradient_pass = s.max_relative_error < opts.threshold;

  constexpr int kOracleNodeLimit = 9;
  if (opts.oracle_max_nodes > kOracleNodeLimit) {
    s.notices.push_back("oracle sweep skipped: " + std::to_string(opts.oracle_max_nodes) +
                        " nodes exceeds the enumeration limit of " +
                        std::to_string(kOracleNodeLimit));
    return s;
  }
  for (int i = 0; i < opts.oracle_instances; ++i) {
    const NodeId n = std::uniform_int_distribution<NodeId>(3, std::max(3, opts.oracle_max_nodes))(rng);
    const int k = std::uniform_int_distribution<int>(2, 3)(rng);
    auto inst = random_instance(rng(), n, 0.4, k, 2, opts.edge_mode);
    if (admissible_flips(inst.graph, inst.scenario, {}).size() > kMaxEnumerablePairs) {
      ++s.oracle_skipped;
      continue;
    }
    const auto targets = all_nodes(n);
    CertifyOptions pi, bf;
    bf.kind = CertifierKind::kBruteForce;
    const auto a = certify_graph(targets, inst.graph, ctx, inst.logits, inst.scenario, {}, pi);
    const auto b = certify_graph(targets, inst.graph, ctx, inst.logits, inst.scenario, {}, bf);
    for (std::size_t j = 0; j < a.targets.size(); ++j) {
      const double gap = a.targets[j].worst_margin - b.targets[j].worst_margin;
      s.oracle_max_gap = std::max(s.oracle_max_gap, std::abs(gap));
      const double tol = opts.edge_mode == EdgeMode::kDirectedFragile ? 1e-9 : 1e-6;
      if (std::abs(gap) > tol) ++s.oracle_mismatches;
      if (gap < -1e-9) s.oracle_pass = false;
    }
    ++s.oracle_cases;
  }
  if (opts.edge_mode == EdgeMode::kDirectedFragile && s.oracle_mismatches > 0) s.oracle_pass = false;
  if (s.oracle_skipped > 0) {
    s.notices.push_back(std::to_string(s.oracle_skipped) +
                        " oracle instances skipped: too many admissible flips to enumerate");
  }
  return s;
}

}  // namespace advimmune

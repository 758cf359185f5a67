#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "advimmune/baselines.hpp"
#include "advimmune/certify.hpp"
#include "advimmune/immunize.hpp"

namespace advimmune {

inline constexpr std::string_view kVersion = "advimmune 0.1.0";

// Flat experiment description. Every field has a `key = value` spelling in
// config files and a matching command-line flag.
struct ExperimentConfig {
  std::string dataset = "karate";          // karate | sbm | files
  std::string edges, features, labels, logits;
  double alpha = 0.85;
  std::string solver = "auto";             // auto | dense | power
  int budget_offset = 6;                   // b_t = max(deg - offset, 0)
  std::optional<int> uniform_budget;       // replaces the degree rule when set
  std::optional<int> global_budget;        // brute-force certifier only
  EdgeMode edge_mode = EdgeMode::kDirectedFragile;
  std::string method = "advimmune-edge";   // advimmune-edge | advimmune-node | baseline:<kind> | none
  std::string level = "edge";              // baseline level: edge | node
  std::string budget = "2";                // absolute count, fraction, percentage, or comma list
  std::optional<int> attack_updates;
  std::optional<int> candidate_count;
  std::uint64_t seed = 0;
  std::string targets = "all";             // all | train | test | comma-separated ids
  std::string certifier = "policy-iteration";
  bool per_target = false;
  std::string output = "out";
  std::string mask;                        // mask.json for evaluate / report
  int epochs = 200;
  double learning_rate = 0.5;
  double train_fraction = 0.5;
  int sbm_nodes = 300;
  double sbm_p_in = 0.03;
  double sbm_p_out = 0.005;
  int feature_dims = 16;

  // Applies one `key = value` setting; throws UsageError on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  // Throws UsageError naming the offending line.
  static ExperimentConfig parse(std::string_view text);
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct Dataset {
  std::string name;
  Graph graph;
  FeatureMatrix features;   // x may be empty for file datasets without features
  Logits logits;            // y_ref assigned
  double train_accuracy = 0.0;
};

// Two equal blocks with edge probabilities p_in / p_out; block ids in `blocks`.
Graph two_block_sbm(NodeId n, double p_in, double p_out, std::uint64_t seed,
                    std::vector<int>* blocks);
// Binary features: each block prefers its half of the dimensions.
Eigen::MatrixXd block_features(const std::vector<int>& blocks, int dims, std::uint64_t seed);
// Stratified random training mask with round(fraction * class size) per class, at least one.
std::vector<char> stratified_train_mask(const std::vector<int>& labels, double fraction,
                                        std::uint64_t seed);

// Throws Error with kData for unreadable or inconsistent inputs.
Dataset load_dataset(const ExperimentConfig& cfg);

// Fractions resolve against n^2 pairs (edge level) or n nodes (node level),
// rounded down with a minimum of 1.
std::size_t resolve_budget(std::string_view spec, bool edge_level, NodeId n);
std::vector<NodeId> resolve_targets(std::string_view spec, const Dataset& ds);

// Throws std::invalid_argument on empty targets.
double robust_ratio(const CertificationResult& cert, std::span<const NodeId> targets);

PerturbationScenario scenario_of(const ExperimentConfig& cfg);
PPRContext context_of(const ExperimentConfig& cfg);
CertifyOptions certify_options_of(const ExperimentConfig& cfg);

// Union of the worst deltas of all targets.
PerturbationDelta attack_union(const CertificationResult& cert, EdgeMode mode);

std::string margins_csv(const CertificationResult& cert);
nlohmann::ordered_json certificate_json(const CertificationResult& cert);
nlohmann::ordered_json mask_json(const ImmuneMask& mask, std::size_t budget,
                                 const std::vector<double>& trace);
ImmuneMask parse_mask_json(std::string_view text);

// All output files of one command, keyed by path relative to the output directory.
struct Report {
  nlohmann::ordered_json json;
  std::map<std::string, std::string> files;
  bool failed = false;

  void write(const std::filesystem::path& dir) const;
};

// certify -> immunize (or baseline) -> re-certify, for each budget in cfg.budget.
Report run_experiment(const ExperimentConfig& cfg);
// Certifies the dataset under the mask in cfg.mask (empty when unset).
Report certify_command(const ExperimentConfig& cfg);
// Before/after certification of an existing mask.
Report evaluate_command(const ExperimentConfig& cfg);
// Similarity histograms of an existing mask.
Report report_command(const ExperimentConfig& cfg);

struct GradcheckOptions {
  int instances = 100;
  int max_nodes = 12;
  double step = 1e-5;
  double threshold = 1e-5;
  GradientForm form = GradientForm::kExact;
  int oracle_instances = 50;
  int oracle_max_nodes = 7;
  EdgeMode edge_mode = EdgeMode::kDirectedFragile;
  std::uint64_t seed = 0;
};

struct GradcheckSummary {
  int gradient_cases = 0;
  double max_relative_error = 0.0;
  bool gradient_pass = true;
  int oracle_cases = 0;
  int oracle_skipped = 0;
  int oracle_mismatches = 0;
  double oracle_max_gap = 0.0;
  bool oracle_pass = true;
  std::vector<std::string> notices;

  bool pass() const { return gradient_pass && oracle_pass; }
  nlohmann::ordered_json to_json() const;
};

// Random graph and logits used by the self-checks: n nodes, edge probability p,
// k classes, explicit budgets in [0, max_budget].
struct RandomInstance {
  Graph graph;
  Logits logits;
  PerturbationScenario scenario;
};
RandomInstance random_instance(std::uint64_t seed, NodeId n, double p, int k, int max_budget,
                               EdgeMode mode);

GradcheckSummary gradcheck(const GradcheckOptions& opts);

}  // namespace advimmune

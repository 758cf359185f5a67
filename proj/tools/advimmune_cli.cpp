#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "advimmune/error.hpp"
#include "advimmune/harness.hpp"
#include "advimmune/io.hpp"

using advimmune::ExitCode;
using advimmune::ExperimentConfig;

namespace {

// Config keys exposed as --flags (underscores become dashes).
const std::vector<std::string> kConfigKeys = {
    "dataset",        "edges",         "features",       "labels",        "logits",
    "alpha",          "solver",        "budget_offset",  "uniform_budget", "global_budget",
    "edge_mode",      "budget",        "attack_updates", "candidate_count", "seed",
    "targets",        "certifier",     "per_target",     "output",        "mask",
    "epochs",         "learning_rate", "train_fraction", "sbm_nodes",     "sbm_p_in",
    "sbm_p_out",      "feature_dims"};

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "flat key = value configuration file");
    for (const auto& key : kConfigKeys) {
      std::string flag = "--" + key;
      for (char& ch : flag) {
        if (ch == '_') ch = '-';
      }
      cmd->add_option(flag, values[key]);
    }
  }

  ExperimentConfig build() const {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      std::string text;
      try {
        text = advimmune::io::read_file(config_path);
      } catch (const advimmune::ParseError&) {
        throw advimmune::UsageError("cannot read config '" + config_path + "'");
      }
      cfg = ExperimentConfig::parse(text);
    }
    for (const auto& key : kConfigKeys) {
      const auto& v = values.at(key);
      if (!v.empty()) cfg.set(key, v);
    }
    return cfg;
  }
};

void print_summary(const advimmune::Report& r, const std::string& dir) {
  const auto& j = r.json;
  for (const char* key : {"robust_ratio_before", "robust_ratio_after", "avg_worst_margin_before",
                          "avg_worst_margin_after"}) {
    if (j.contains(key)) std::cout << key << " = " << j[key].dump() << '\n';
  }
  if (j.contains("certification")) std::cout << "certification = " << j["certification"].dump() << '\n';
  std::cout << "wrote " << dir << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Certified robustness and adversarial immunization for PPR-propagated classifiers"};
  app.require_subcommand(1);

  ConfigFlags certify_flags, edge_flags, node_flags, baseline_flags, evaluate_flags, report_flags;
  auto* certify = app.add_subcommand("certify", "certify every target's worst-case margin");
  certify_flags.attach(certify);
  auto* edge = app.add_subcommand("immunize-edge", "greedy edge-level immunization");
  edge_flags.attach(edge);
  auto* node = app.add_subcommand("immunize-node", "greedy node-level immunization");
  node_flags.attach(node);
  auto* baseline = app.add_subcommand("baseline", "heuristic immunization baseline");
  baseline_flags.attach(baseline);
  std::string kind, level = "edge";
  baseline->add_option("--kind", kind, "random | attack-random | jaccard | cosine | bridgeness | betweenness")
      ->required();
  baseline->add_option("--level", level, "edge | node");
  auto* evaluate = app.add_subcommand("evaluate", "certify before and after applying a mask");
  evaluate_flags.attach(evaluate);
  auto* report = app.add_subcommand("report", "similarity histograms of a mask");
  report_flags.attach(report);

  advimmune::GradcheckOptions gc;
  std::string gc_mode = "directed-fragile", gc_output;
  bool drop_degree = false;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference and oracle self-checks");
  grad->add_option("--instances", gc.instances);
  grad->add_option("--max-nodes", gc.max_nodes);
  grad->add_option("--step", gc.step);
  grad->add_option("--threshold", gc.threshold);
  grad->add_option("--oracle-instances", gc.oracle_instances);
  grad->add_option("--oracle-max-nodes", gc.oracle_max_nodes);
  grad->add_option("--edge-mode", gc_mode);
  grad->add_option("--seed", gc.seed);
  grad->add_option("--output", gc_output);
  grad->add_flag("--drop-degree-term", drop_degree, "negative control with a corrupted gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  if (grad->parsed()) {
    try {
      gc.edge_mode = advimmune::parse_edge_mode(gc_mode);
    } catch (const std::invalid_argument&) {
      throw advimmune::UsageError("invalid edge mode '" + gc_mode + "'");
    }
    if (drop_degree) gc.form = advimmune::GradientForm::kDropDegreeTerm;
    const auto summary = advimmune::gradcheck(gc);
    const auto j = summary.to_json();
    std::cout << j.dump(2) << '\n';
    if (!gc_output.empty()) {
      advimmune::io::write_file_atomic(std::filesystem::path(gc_output) / "gradcheck.json",
                                       j.dump(2) + "\n");
    }
    return summary.pass() ? 0 : static_cast<int>(ExitCode::kNumeric);
  }

  advimmune::Report r;
  ExperimentConfig cfg;
  if (certify->parsed()) {
    cfg = certify_flags.build();
    r = advimmune::certify_command(cfg);
  } else if (edge->parsed()) {
    cfg = edge_flags.build();
    cfg.method = "advimmune-edge";
    r = advimmune::run_experiment(cfg);
  } else if (node->parsed()) {
    cfg = node_flags.build();
    cfg.method = "advimmune-node";
    r = advimmune::run_experiment(cfg);
  } else if (baseline->parsed()) {
    cfg = baseline_flags.build();
    cfg.method = "baseline:" + kind;
    cfg.level = level;
    r = advimmune::run_experiment(cfg);
  } else if (evaluate->parsed()) {
    cfg = evaluate_flags.build();
    r = advimmune::evaluate_command(cfg);
  } else {
    cfg = report_flags.build();
    r = advimmune::report_command(cfg);
  }
  r.write(cfg.output);
  print_summary(r, cfg.output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const advimmune::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::length_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kUsage);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kNumeric);
  }
}

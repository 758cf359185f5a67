#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advimmune/certify.hpp"
#include "advimmune/gradient.hpp"

namespace advimmune {

// Sum over targets of the worst-case margin under the mask.
double total_worst_margin(std::span<const NodeId> targets, const Graph& g, const PPRContext& ctx,
                          const Logits& l, const PerturbationScenario& sc, const ImmuneMask& mask,
                          const CertifyOptions& opts = {});

enum class RunStatus {
  kCompleted,
  kExhausted,   // no candidate left before the budget was spent
  kSaturated,   // the attacker has no effective flip left
};
std::string_view to_string(RunStatus s);

struct ImmunizeOptions {
  CertifyOptions certify;
  // Edge level: number of attack updates c; defaults to min(100, budget).
  std::optional<int> attack_updates;
  // Node level: size of the candidate set; defaults to max(4 * budget, 50) capped at n.
  std::optional<int> candidate_count;
  // Node level: lazy (CELF) gain updates, or recompute every gain each round.
  bool lazy = true;
};

struct ImmunizationRun {
  ImmuneMask mask;
  std::size_t budget = 0;
  // Summed worst-case margin at every attack update, then after the last selection.
  std::vector<double> objective_trace;
  int attack_update_count = 0;        // c
  int attack_updates_performed = 0;
  std::vector<NodeId> candidates;     // node level, in ranking order
  std::vector<double> initial_gains;  // aligned with candidates
  std::vector<int> gain_updates;      // node level: gain recomputations per selection
  RunStatus status = RunStatus::kCompleted;
  std::string message;
  CertificationResult final_certificate;
};

// Each target's class of smallest margin when its per-class worst deltas are
// restricted by the mask, with the restricted delta attached.
struct MaskedAttack {
  std::vector<TargetAttack> attacks;
  std::vector<double> margins;  // aligned with attacks
};
MaskedAttack masked_worst_classes(const CertificationResult& cert, const Graph& g,
                                  const ImmuneMask& mask, const PPRContext& ctx, const Logits& l,
                                  Exec exec = Exec::kParallel, ResolventCache* cache = nullptr);

// Greedy edge-level immunization driven by the meta-gradient of the summed
// worst-case margins.
ImmunizationRun advimmune_edge(std::span<const NodeId> targets, const Graph& g,
                               const PPRContext& ctx, const Logits& l,
                               const PerturbationScenario& sc, std::size_t budget,
                               const ImmunizeOptions& opts = {});

// Exact gain in the summed worst-case margin from additionally protecting
// node j, relative to `current` (certified under `mask`).
double robustness_gain(NodeId j, const ImmuneMask& mask, const CertificationResult& current,
                       std::span<const NodeId> targets, const Graph& g, const PPRContext& ctx,
                       const Logits& l, const PerturbationScenario& sc,
                       const CertifyOptions& opts = {});

// Greedy node-level immunization over the top meta-gradient candidates.
ImmunizationRun advimmune_node(std::span<const NodeId> targets, const Graph& g,
                               const PPRContext& ctx, const Logits& l,
                               const PerturbationScenario& sc, std::size_t budget,
                               const ImmunizeOptions& opts = {});

}  // namespace advimmune

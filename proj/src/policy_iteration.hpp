#pragma once

#include <Eigen/Dense>
#include <vector>

#include "advimmune/certify.hpp"

namespace advimmune::detail {

// One attacker problem: minimize sum_{t in targets} v_t where
// v = (I - alpha P_hat)^-1 reward and P_hat follows the admissible flips.
struct AttackProblem {
  const Graph& g;
  const PPRContext& ctx;
  Eigen::VectorXd reward;
  std::vector<NodeId> targets;
  std::vector<int> budgets;
  const ImmuneMask& mask;
  EdgeMode mode;
  int max_sweeps;
};

struct AttackSolution {
  PerturbationDelta delta;
  Eigen::VectorXd values;
  bool converged = true;
  int sweeps = 0;
  std::vector<double> trace;
};

AttackSolution solve_attack(const AttackProblem& prob, const PerturbationDelta* warm);

CertificationResult certify_brute_force(std::span<const NodeId> targets, const Graph& g,
                                        const PPRContext& ctx, const Logits& l,
                                        const PerturbationScenario& sc, const ImmuneMask& mask,
                                        Exec exec);

}  // namespace advimmune::detail

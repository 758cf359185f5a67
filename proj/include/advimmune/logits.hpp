#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string_view>
#include <vector>

#include "advimmune/graph.hpp"
#include "advimmune/ppr.hpp"

namespace advimmune {

// Per-node class scores fed into propagation, plus the reference class of
// every node (the class whose margin is certified).
struct Logits {
  Eigen::MatrixXd h;        // N x K
  std::vector<int> y_ref;   // empty until assigned

  int num_classes() const { return static_cast<int>(h.cols()); }
  NodeId num_nodes() const { return static_cast<NodeId>(h.rows()); }
  // Throws DimensionError / NumericError if the invariants do not hold for n nodes.
  void validate(NodeId n) const;
};

struct FeatureMatrix {
  Eigen::MatrixXd x;               // N x d
  std::vector<int> labels;         // optional, length N
  std::vector<char> train_mask;    // optional, length N
};

// N rows of K numeric columns; throws ParseError on ragged rows or
// non-numeric / non-finite cells and DimensionError when K does not match.
Logits load_logits(std::string_view csv, int k);
Eigen::MatrixXd load_features(std::string_view csv);
// `node_id,label` rows; an optional header line is skipped.
std::vector<int> load_labels(std::string_view csv, NodeId n);

struct TrainOptions {
  int epochs = 200;
  double lr = 0.5;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Logits logits;
  Eigen::MatrixXd weights;       // d x K
  Eigen::RowVectorXd bias;       // K
  std::vector<double> loss;      // mean cross-entropy before each update, plus final
  double train_accuracy = 0.0;
  bool diverged = false;         // loss increased at some epoch
};

// Full-batch softmax regression on the masked nodes; deterministic given the seed.
// Throws std::invalid_argument if there are no training nodes.
TrainResult train_linear(const FeatureMatrix& f, const TrainOptions& opts);
Logits train_linear_logits(const FeatureMatrix& f, int epochs, double lr, std::uint64_t seed);

// Clean-graph prediction argmax_k (Pi H)_{t,k}, smallest class on ties.
std::vector<int> reference_classes(const Graph& g, const PPRContext& ctx, const Logits& l);
std::vector<int> argmax_rows(const Eigen::MatrixXd& m);

}  // namespace advimmune

#include "advimmune/logits.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "advimmune/error.hpp"
#include "advimmune/io.hpp"

namespace advimmune {

void Logits::validate(NodeId n) const {
  if (h.rows() != n) {
    throw DimensionError("logits have " + std::to_string(h.rows()) + " rows but the graph has " +
                         std::to_string(n) + " nodes");
  }
  if (h.cols() < 2) throw DimensionError("logits need at least two classes");
  if (!h.allFinite()) throw NumericError("logits contain non-finite entries");
  if (!y_ref.empty()) {
    if (static_cast<NodeId>(y_ref.size()) != n) throw DimensionError("y_ref length mismatch");
    for (int y : y_ref) {
      if (y < 0 || y >= h.cols()) throw DimensionError("reference class out of range");
    }
  }
}

namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace

Logits load_logits(std::string_view csv, int k) {
  Logits l;
  l.h = to_matrix(io::parse_numeric_csv(csv));
  if (l.h.rows() > 0 && l.h.cols() != k) {
    throw DimensionError("logits have " + std::to_string(l.h.cols()) + " columns, expected " +
                         std::to_string(k));
  }
  return l;
}

Eigen::MatrixXd load_features(std::string_view csv) { return to_matrix(io::parse_numeric_csv(csv)); }

std::vector<int> load_labels(std::string_view csv, NodeId n) {
  std::size_t first = csv.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && std::isalpha(static_cast<unsigned char>(csv[first]))) {
    auto nl = csv.find('\n', first);
    csv = nl == std::string_view::npos ? std::string_view{} : csv.substr(nl + 1);
  }
  auto rows = io::parse_numeric_csv(csv);
  std::vector<int> labels(n, -1);
  for (const auto& row : rows) {
    if (row.size() != 2) throw ParseError("label rows must be `node_id,label`");
    const double id = row[0], lab = row[1];
    if (id != std::floor(id) || lab != std::floor(lab) || id < 0 || lab < 0) {
      throw ParseError("label row with non-integer or negative value");
    }
    if (id >= n) throw DimensionError("label for node " + std::to_string(id) + " outside graph");
    labels[static_cast<std::size_t>(id)] = static_cast<int>(lab);
  }
  return labels;
}

namespace {

// Row-wise softmax; returns mean cross-entropy over the masked rows.
double softmax_loss(const Eigen::MatrixXd& scores, const std::vector<int>& rows,
                    const std::vector<int>& labels, Eigen::MatrixXd& probs) {
  double loss = 0.0;
  probs.resize(static_cast<Eigen::Index>(rows.size()), scores.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto s = scores.row(rows[r]);
    const double mx = s.maxCoeff();
    Eigen::RowVectorXd e = (s.array() - mx).exp();
    const double z = e.sum();
    probs.row(static_cast<Eigen::Index>(r)) = e / z;
    loss -= (s(labels[rows[r]]) - mx) - std::log(z);
  }
  return loss / static_cast<double>(rows.size());
}

}  // namespace

TrainResult train_linear(const FeatureMatrix& f, const TrainOptions& opts) {
  const auto n = f.x.rows();
  const auto d = f.x.cols();
  if (static_cast<Eigen::Index>(f.labels.size()) != n) throw DimensionError("labels length mismatch");
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool use = f.train_mask.empty() || f.train_mask[i];
    if (use && f.labels[i] >= 0) rows.push_back(static_cast<int>(i));
  }
  if (rows.empty()) throw std::invalid_argument("train_linear: empty training set");
  int k = 0;
  for (int y : f.labels) k = std::max(k, y + 1);
  k = std::max(k, 2);

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> init(0.0, 0.01);
  TrainResult out;
  out.weights.resize(d, k);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (int c = 0; c < k; ++c) out.weights(i, c) = init(rng);
  }
  out.bias = Eigen::RowVectorXd::Zero(k);

  Eigen::MatrixXd x_train(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) x_train.row(r) = f.x.row(rows[r]);
  std::vector<int> local_rows(rows.size());
  std::vector<int> local_labels(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    local_rows[r] = static_cast<int>(r);
    local_labels[r] = f.labels[rows[r]];
  }

  const double m = static_cast<double>(rows.size());
  Eigen::MatrixXd probs;
  for (int epoch = 0; epoch <= opts.epochs; ++epoch) {
    Eigen::MatrixXd scores = (x_train * out.weights).rowwise() + out.bias;
    double loss = softmax_loss(scores, local_rows, local_labels, probs);
    loss += 0.5 * opts.weight_decay * out.weights.squaredNorm();
    if (!out.loss.empty() && loss > out.loss.back() + 1e-12) out.diverged = true;
    out.loss.push_back(loss);
    if (epoch == opts.epochs) break;
    Eigen::MatrixXd grad_scores = probs;
    for (std::size_t r = 0; r < rows.size(); ++r) grad_scores(r, local_labels[r]) -= 1.0;
    grad_scores /= m;
    Eigen::MatrixXd grad_w = x_train.transpose() * grad_scores + opts.weight_decay * out.weights;
    Eigen::RowVectorXd grad_b = grad_scores.colwise().sum();
    out.weights -= opts.lr * grad_w;
    out.bias -= opts.lr * grad_b;
  }

  out.logits.h = (f.x * out.weights).rowwise() + out.bias;
  int correct = 0;
  auto pred = argmax_rows(out.logits.h);
  for (int r : rows) correct += pred[r] == f.labels[r];
  out.train_accuracy = correct / m;
  return out;
}

Logits train_linear_logits(const FeatureMatrix& f, int epochs, double lr, std::uint64_t seed) {
  TrainOptions opts;
  opts.epochs = epochs;
  opts.lr = lr;
  opts.seed = seed;
  return train_linear(f, opts).logits;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& m) {
  std::vector<int> out(m.rows(), 0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(i, c) > m(i, best)) best = static_cast<int>(c);
    }
    out[i] = best;
  }
  return out;
}

std::vector<int> reference_classes(const Graph& g, const PPRContext& ctx, const Logits& l) {
  if (l.h.rows() != g.num_nodes()) throw DimensionError("logits row count does not match graph");
  Resolvent res(Digraph::from(g), ctx);
  Eigen::MatrixXd diffused(l.h.rows(), l.h.cols());
  // Pi H = (1 - alpha) (I - alpha P)^-1 H, column by column.
  for (Eigen::Index c = 0; c < l.h.cols(); ++c) {
    diffused.col(c) = (1.0 - ctx.alpha) * res.solve(l.h.col(c));
  }
  return argmax_rows(diffused);
}

}  // namespace advimmune

#pragma once

#include <span>
#include <vector>

#include "honesty/models.hpp"
#include "honesty/models/common.hpp"

namespace honesty::models {

// A node is a leaf when feature < 0. Internal nodes send x to `left` when
// x[feature] <= threshold.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output: class vote (0/1) or regression value
};

class DecisionTree {
public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes);

  double predict(std::span<const double> x) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t depth() const;

  static constexpr std::size_t kDoublesPerNode = 5;
  void append_parameters(std::vector<double>& out) const;
  static DecisionTree from_parameters(std::span<const double> params, std::size_t node_count);

private:
  std::vector<TreeNode> nodes_;
};

struct CartOptions {
  int max_depth = 0;          // 0 = unlimited
  int min_samples_split = 2;
  int max_features = 0;       // 0 = all features
};

// Classification tree with Gini impurity. `weights[i]` is the multiplicity of
// sample i (bootstrap counts; zero excludes the sample). A node is split while
// it is impure and some feature takes two distinct values in it; the split
// minimizing weighted child Gini wins, ties going to the lower feature index
// and then the lower threshold. Thresholds are midpoints between adjacent
// distinct values. Leaves vote for the majority class, 1 on ties.
DecisionTree fit_classification_tree(const Matrix& X, std::span<const int> y,
                                     std::span<const int> weights, const CartOptions& options, Rng& rng);

// Probability = fraction of trees voting 1.
class TreeEnsemble final : public Classifier {
public:
  TreeEnsemble(std::vector<DecisionTree> trees, std::size_t width)
      : trees_(std::move(trees)), width_(width) {}

  Family family() const override { return Family::TreeEnsemble; }
  std::size_t width() const override { return width_; }
  double predict_proba(std::span<const double> x) const override;
  nlohmann::json structure() const override;
  std::vector<double> parameters() const override;

  const std::vector<DecisionTree>& trees() const { return trees_; }

private:
  std::vector<DecisionTree> trees_;
  std::size_t width_;
};

// Regression tree on per-sample targets (residuals) fitted level by level
// over presorted feature orders. Split score: variance reduction. Leaf values
// are Newton steps sum(g) / sum(h) over the leaf's samples.
struct RegressionTreeOptions {
  int max_depth = 3;
  int min_samples_leaf = 1;
};
DecisionTree fit_newton_tree(const Matrix& X, const std::vector<std::vector<std::size_t>>& sorted_by_feature,
                             std::span<const double> gradient, std::span<const double> hessian,
                             const RegressionTreeOptions& options);

// Per-feature row orders sorted by value (stable in row index).
std::vector<std::vector<std::size_t>> presort(const Matrix& X);

// Score F(x) = init + sum of tree outputs; probability = sigmoid(F).
class GradientBoostedTrees final : public Classifier {
public:
  GradientBoostedTrees(double init, std::vector<DecisionTree> trees, std::size_t width)
      : init_(init), trees_(std::move(trees)), width_(width) {}

  Family family() const override { return Family::GBT; }
  std::size_t width() const override { return width_; }
  double score(std::span<const double> x) const;
  double predict_proba(std::span<const double> x) const override;
  nlohmann::json structure() const override;
  std::vector<double> parameters() const override;

  std::size_t stages() const { return trees_.size(); }
  // Score using only the first `k` stages.
  double score(std::span<const double> x, std::size_t k) const;

private:
  double init_;
  std::vector<DecisionTree> trees_;
  std::size_t width_;
};

TrainOutput train_tree_ensemble(const ModelSpec& spec, const Dataset& data);
TrainOutput train_gbt(const ModelSpec& spec, const Dataset& data);

}  // namespace honesty::models

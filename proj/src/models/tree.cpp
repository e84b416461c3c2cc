#include "honesty/models/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "honesty/error.hpp"

namespace honesty::models {

DecisionTree::DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ValidationError("a decision tree needs at least one node");
  for (const auto& n : nodes_) {
    if (n.feature >= 0) {
      const auto count = static_cast<int>(nodes_.size());
      if (n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count) {
        throw ValidationError("decision tree node has an invalid child index");
      }
    }
  }
}

double DecisionTree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const auto& n = nodes_[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes_[i].value;
}

std::size_t DecisionTree::depth() const {
  std::vector<std::size_t> d(nodes_.size(), 0);
  std::size_t deepest = 0;
  // Children always come after their parent.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (nodes_[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

void DecisionTree::append_parameters(std::vector<double>& out) const {
  for (const auto& n : nodes_) {
    out.push_back(n.feature);
    out.push_back(n.threshold);
    out.push_back(n.left);
    out.push_back(n.right);
    out.push_back(n.value);
  }
}

DecisionTree DecisionTree::from_parameters(std::span<const double> params, std::size_t node_count) {
  if (params.size() != node_count * kDoublesPerNode) throw ValidationError("tree parameter block has wrong size");
  std::vector<TreeNode> nodes(node_count);
  for (std::size_t i = 0; i < node_count; ++i) {
    const double* p = params.data() + i * kDoublesPerNode;
    nodes[i] = TreeNode{static_cast<int>(p[0]), p[1], static_cast<int>(p[2]), static_cast<int>(p[3]), p[4]};
  }
  return DecisionTree(std::move(nodes));
}

namespace {

double midpoint(double lo, double hi) {
  const double t = lo + (hi - lo) / 2;
  return t < hi ? t : lo;
}

// Gini split score as an exact fraction: sum over children of
// (n_c0^2 + n_c1^2) / n_c, which is maximal where weighted Gini is minimal.
struct SplitScore {
  __int128 num = -1;
  __int128 den = 1;

  static SplitScore of(std::int64_t l0, std::int64_t l1, std::int64_t r0, std::int64_t r1) {
    const __int128 nl = l0 + l1;
    const __int128 nr = r0 + r1;
    const __int128 sl = static_cast<__int128>(l0) * l0 + static_cast<__int128>(l1) * l1;
    const __int128 sr = static_cast<__int128>(r0) * r0 + static_cast<__int128>(r1) * r1;
    return {sl * nr + sr * nl, nl * nr};
  }
  bool valid() const { return num >= 0; }
  bool operator>(const SplitScore& o) const {
    if (!o.valid()) return valid();
    return num * o.den > o.num * den;
  }
};

struct Split {
  int feature = -1;
  double threshold = 0.0;
  SplitScore score;
};

class CartBuilder {
public:
  CartBuilder(const Matrix& X, std::span<const int> y, std::span<const int> weights, const CartOptions& options,
              Rng& rng)
      : X_(X), y_(y), w_(weights), options_(options), rng_(rng) {}

  std::vector<TreeNode> build(std::vector<std::size_t> rows) {
    grow(std::move(rows), 0);
    return std::move(nodes_);
  }

private:
  int grow(std::vector<std::size_t> rows, int depth) {
    std::int64_t c0 = 0, c1 = 0;
    for (auto i : rows) (y_[i] ? c1 : c0) += w_[i];
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{-1, 0.0, -1, -1, c1 >= c0 ? 1.0 : 0.0});

    if (c0 == 0 || c1 == 0) return id;
    if (c0 + c1 < options_.min_samples_split) return id;
    if (options_.max_depth > 0 && depth >= options_.max_depth) return id;

    const auto width = static_cast<int>(X_.cols());
    std::vector<int> candidates = feature_candidates(width);
    Split best = best_split(rows, candidates);
    if (best.feature < 0 && static_cast<int>(candidates.size()) < width) {
      // Every sampled feature was constant here; fall back to the rest.
      std::vector<int> rest;
      std::vector<bool> taken(static_cast<std::size_t>(width), false);
      for (int f : candidates) taken[static_cast<std::size_t>(f)] = true;
      for (int f = 0; f < width; ++f) {
        if (!taken[static_cast<std::size_t>(f)]) rest.push_back(f);
      }
      best = best_split(rows, rest);
    }
    if (best.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto i : rows) (X_(static_cast<Eigen::Index>(i), best.feature) <= best.threshold ? left : right).push_back(i);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    nodes_[static_cast<std::size_t>(id)].feature = best.feature;
    nodes_[static_cast<std::size_t>(id)].threshold = best.threshold;
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  std::vector<int> feature_candidates(int width) {
    std::vector<int> all(static_cast<std::size_t>(width));
    std::iota(all.begin(), all.end(), 0);
    const int k = options_.max_features;
    if (k <= 0 || k >= width) return all;
    for (int i = 0; i < k; ++i) {
      const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(rng_.below(static_cast<std::uint64_t>(width - i)));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    all.resize(static_cast<std::size_t>(k));
    std::sort(all.begin(), all.end());
    return all;
  }

  // `features` ascending; strict improvement keeps the lowest feature and
  // lowest threshold among ties.
  Split best_split(const std::vector<std::size_t>& rows, const std::vector<int>& features) {
    Split best;
    std::int64_t t0 = 0, t1 = 0;
    for (auto i : rows) (y_[i] ? t1 : t0) += w_[i];
    std::vector<std::pair<double, std::size_t>> column(rows.size());
    for (int f : features) {
      for (std::size_t k = 0; k < rows.size(); ++k) {
        column[k] = {X_(static_cast<Eigen::Index>(rows[k]), f), rows[k]};
      }
      std::sort(column.begin(), column.end());
      std::int64_t l0 = 0, l1 = 0;
      for (std::size_t k = 0; k + 1 < column.size(); ++k) {
        const auto i = column[k].second;
        (y_[i] ? l1 : l0) += w_[i];
        if (column[k].first == column[k + 1].first) continue;
        const SplitScore s = SplitScore::of(l0, l1, t0 - l0, t1 - l1);
        if (s > best.score) best = {f, midpoint(column[k].first, column[k + 1].first), s};
      }
    }
    return best;
  }

  const Matrix& X_;
  std::span<const int> y_;
  std::span<const int> w_;
  CartOptions options_;
  Rng& rng_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

DecisionTree fit_classification_tree(const Matrix& X, std::span<const int> y, std::span<const int> weights,
                                     const CartOptions& options, Rng& rng) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0) rows.push_back(i);
  }
  if (rows.empty()) throw PreconditionError("cannot grow a tree on zero samples");
  return DecisionTree(CartBuilder(X, y, weights, options, rng).build(std::move(rows)));
}

double TreeEnsemble::predict_proba(std::span<const double> x) const {
  double votes = 0;
  for (const auto& t : trees_) votes += t.predict(x) >= 0.5 ? 1.0 : 0.0;
  return votes / static_cast<double>(trees_.size());
}

nlohmann::json TreeEnsemble::structure() const {
  std::vector<std::size_t> counts;
  for (const auto& t : trees_) counts.push_back(t.nodes().size());
  return {{"width", width_}, {"node_counts", counts}};
}

std::vector<double> TreeEnsemble::parameters() const {
  std::vector<double> out;
  for (const auto& t : trees_) t.append_parameters(out);
  return out;
}

TrainOutput train_tree_ensemble(const ModelSpec& spec, const Dataset& data) {
  const int forest_size = hyper_int(spec, "forest_size");
  CartOptions options;
  options.max_depth = hyper_int(spec, "max_depth");
  options.min_samples_split = hyper_int(spec, "min_samples_split");
  options.max_features = hyper_int(spec, "max_features");
  const auto width = static_cast<int>(data.width());
  if (options.max_features == 0 && forest_size > 1) {
    options.max_features = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(width)))));
  }

  const std::size_t n = data.size();
  Rng rng(spec.seed);
  std::vector<DecisionTree> trees;
  std::vector<double> log;
  std::vector<double> votes(n, 0.0);
  for (int t = 0; t < forest_size; ++t) {
    std::vector<int> weights(n, forest_size == 1 ? 1 : 0);
    if (forest_size > 1) {
      for (std::size_t k = 0; k < n; ++k) ++weights[static_cast<std::size_t>(rng.below(n))];
    }
    trees.push_back(fit_classification_tree(data.X, data.y, weights, options, rng));
    // Training error of the ensemble so far.
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < n; ++i) {
      votes[i] += trees.back().predict(row(data.X, static_cast<Eigen::Index>(i))) >= 0.5 ? 1.0 : 0.0;
      const int pred = votes[i] / (t + 1) >= 0.5 ? 1 : 0;
      wrong += pred != data.y[i];
    }
    log.push_back(static_cast<double>(wrong) / static_cast<double>(n));
  }
  return {std::make_shared<TreeEnsemble>(std::move(trees), data.width()), std::move(log)};
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> presort(const Matrix& X) {
  std::vector<std::vector<std::size_t>> sorted(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    auto& order = sorted[static_cast<std::size_t>(f)];
    order.resize(static_cast<std::size_t>(X.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return X(static_cast<Eigen::Index>(a), f) < X(static_cast<Eigen::Index>(b), f);
    });
  }
  return sorted;
}

DecisionTree fit_newton_tree(const Matrix& X, const std::vector<std::vector<std::size_t>>& sorted_by_feature,
                             std::span<const double> gradient, std::span<const double> hessian,
                             const RegressionTreeOptions& options) {
  const std::size_t n = gradient.size();
  const auto min_leaf = static_cast<std::size_t>(std::max(1, options.min_samples_leaf));
  std::vector<TreeNode> nodes(1);
  std::vector<int> node_of(n, 0);
  std::vector<int> frontier = {0};

  for (int depth = 0; depth < options.max_depth && !frontier.empty(); ++depth) {
    const std::size_t count = nodes.size();
    std::vector<double> g_total(count, 0.0);
    std::vector<std::size_t> n_total(count, 0);
    for (std::size_t i = 0; i < n; ++i) {
      g_total[static_cast<std::size_t>(node_of[i])] += gradient[i];
      ++n_total[static_cast<std::size_t>(node_of[i])];
    }
    std::vector<char> open(count, 0);
    for (int id : frontier) {
      if (n_total[static_cast<std::size_t>(id)] >= 2 * min_leaf) open[static_cast<std::size_t>(id)] = 1;
    }

    std::vector<double> best_score(count, 0.0);
    std::vector<int> best_feature(count, -1);
    std::vector<double> best_threshold(count, 0.0);
    for (std::size_t id = 0; id < count; ++id) {
      if (open[id]) best_score[id] = g_total[id] * g_total[id] / static_cast<double>(n_total[id]);
    }

    std::vector<double> left_g(count);
    std::vector<std::size_t> left_n(count);
    std::vector<double> last(count);
    for (std::size_t f = 0; f < sorted_by_feature.size(); ++f) {
      std::fill(left_g.begin(), left_g.end(), 0.0);
      std::fill(left_n.begin(), left_n.end(), 0);
      for (std::size_t i : sorted_by_feature[f]) {
        const auto id = static_cast<std::size_t>(node_of[i]);
        if (!open[id]) continue;
        const double v = X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
        const std::size_t nl = left_n[id];
        if (nl > 0 && v != last[id]) {
          const std::size_t nr = n_total[id] - nl;
          if (nl >= min_leaf && nr >= min_leaf) {
            const double gl = left_g[id];
            const double gr = g_total[id] - gl;
            const double score = gl * gl / static_cast<double>(nl) + gr * gr / static_cast<double>(nr);
            if (score > best_score[id] * (1 + 1e-12) + 1e-300) {
              best_score[id] = score;
              best_feature[id] = static_cast<int>(f);
              best_threshold[id] = midpoint(last[id], v);
            }
          }
        }
        left_g[id] += gradient[i];
        ++left_n[id];
        last[id] = v;
      }
    }

    std::vector<int> next;
    for (int id : frontier) {
      const auto u = static_cast<std::size_t>(id);
      if (!open[u] || best_feature[u] < 0) continue;
      nodes[u].feature = best_feature[u];
      nodes[u].threshold = best_threshold[u];
      nodes[u].left = static_cast<int>(nodes.size());
      nodes.emplace_back();
      nodes[u].right = static_cast<int>(nodes.size());
      nodes.emplace_back();
      next.push_back(nodes[u].left);
      next.push_back(nodes[u].right);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& node = nodes[static_cast<std::size_t>(node_of[i])];
      if (node.feature < 0) continue;
      node_of[i] = X(static_cast<Eigen::Index>(i), node.feature) <= node.threshold ? node.left : node.right;
    }
    frontier = std::move(next);
  }

  std::vector<double> g_sum(nodes.size(), 0.0), h_sum(nodes.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g_sum[static_cast<std::size_t>(node_of[i])] += gradient[i];
    h_sum[static_cast<std::size_t>(node_of[i])] += hessian[i];
  }
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (nodes[id].feature < 0) nodes[id].value = h_sum[id] > 1e-12 ? g_sum[id] / h_sum[id] : 0.0;
  }
  return DecisionTree(std::move(nodes));
}

double GradientBoostedTrees::score(std::span<const double> x, std::size_t k) const {
  double s = init_;
  for (std::size_t t = 0; t < std::min(k, trees_.size()); ++t) s += trees_[t].predict(x);
  return s;
}

double GradientBoostedTrees::score(std::span<const double> x) const { return score(x, trees_.size()); }

double GradientBoostedTrees::predict_proba(std::span<const double> x) const { return sigmoid(score(x)); }

nlohmann::json GradientBoostedTrees::structure() const {
  std::vector<std::size_t> counts;
  for (const auto& t : trees_) counts.push_back(t.nodes().size());
  return {{"width", width_}, {"node_counts", counts}};
}

std::vector<double> GradientBoostedTrees::parameters() const {
  std::vector<double> out = {init_};
  for (const auto& t : trees_) t.append_parameters(out);
  return out;
}

namespace {

double mean_log_loss(std::span<const double> scores, std::span<const int> y) {
  double loss = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) loss += y[i] ? softplus(-scores[i]) : softplus(scores[i]);
  return loss / static_cast<double>(scores.size());
}

}  // namespace

TrainOutput train_gbt(const ModelSpec& spec, const Dataset& data) {
  const int stages = hyper_int(spec, "stages");
  const double shrinkage = hyper_double(spec, "shrinkage");
  RegressionTreeOptions options;
  options.max_depth = hyper_int(spec, "max_depth");
  options.min_samples_leaf = hyper_int(spec, "min_samples_leaf");

  const std::size_t n = data.size();
  const double positives = static_cast<double>(data.count(1));
  const double init = std::log(positives / (static_cast<double>(n) - positives));
  std::vector<double> scores(n, init);
  double loss = mean_log_loss(scores, data.y);

  const auto sorted = presort(data.X);
  std::vector<DecisionTree> trees;
  std::vector<double> log;
  std::vector<double> g(n), h(n), candidate(n), contribution(n);
  for (int stage = 1; stage <= stages; ++stage) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(scores[i]);
      g[i] = data.y[i] - p;
      h[i] = p * (1 - p);
    }
    DecisionTree tree = fit_newton_tree(data.X, sorted, g, h, options);
    std::vector<TreeNode> nodes = tree.nodes();
    for (auto& node : nodes) {
      if (node.feature < 0) node.value *= shrinkage;
    }
    tree = DecisionTree(nodes);
    for (std::size_t i = 0; i < n; ++i) contribution[i] = tree.predict(row(data.X, static_cast<Eigen::Index>(i)));

    // The step is a descent direction; halve it until the loss does not rise.
    double factor = 1.0;
    double new_loss = loss;
    bool accepted = false;
    for (int attempt = 0; attempt < 40; ++attempt, factor /= 2) {
      for (std::size_t i = 0; i < n; ++i) candidate[i] = scores[i] + factor * contribution[i];
      new_loss = mean_log_loss(candidate, data.y);
      if (new_loss <= loss) {
        accepted = true;
        break;
      }
    }
    guard_loss(new_loss, static_cast<std::size_t>(stage), spec);
    if (!accepted) break;
    if (factor != 1.0) {
      for (auto& node : nodes) {
        if (node.feature < 0) node.value *= factor;
      }
      tree = DecisionTree(std::move(nodes));
    }
    scores.swap(candidate);
    loss = new_loss;
    trees.push_back(std::move(tree));
    log.push_back(loss);
  }
  return {std::make_shared<GradientBoostedTrees>(init, std::move(trees), data.width()), std::move(log)};
}

}  // namespace honesty::models

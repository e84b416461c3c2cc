#pragma once

// Brute-force reference implementations shared by the unit and acceptance
// tests. Written separately from the library code they check.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "honesty/corpus.hpp"
#include "honesty/eval.hpp"
#include "honesty/textprep.hpp"

namespace oracle {

// ---- keyword filter -------------------------------------------------------

inline bool review_matches(const std::string& text, const std::vector<std::string>& terms,
                           const honesty::textprep::StopWordList& stop) {
  for (const auto& tok : honesty::textprep::preprocess(text, stop).tokens) {
    for (const auto& term : terms) {
      if (tok == term) return true;
    }
  }
  return false;
}

inline std::vector<std::string> keyword_filter_ids(const honesty::corpus::Corpus& c,
                                                   const std::vector<std::string>& terms,
                                                   const honesty::textprep::StopWordList& stop) {
  std::vector<std::string> ids;
  for (const auto& r : c.reviews) {
    if (review_matches(r.text, terms, stop)) ids.push_back(r.id);
  }
  return ids;
}

// Reviews stitched from dictionary terms, near misses and noise.
inline honesty::corpus::Corpus random_reviews(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> words = {
      "scam",   "Scam!!", "SCAMMER", "scammy", "fraud", "(fraud)", "lie",  "lies",  "liar", "cheat",
      "cheated", "fake",  "FAKE...", "great",  "app",   "love",    "the",  "is",    "not",  "refund",
      "deceptive", "mis-leading", "misleading", "honest", "dishonest", "\xF0\x9F\x98\xA1", "??", ":(",
      "rip-off", "ripoff", "money", "charged", "\"lie\"", "it's", "a", "theft", "Steal", "stolen"};
  std::mt19937_64 rng(seed);
  honesty::corpus::Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    honesty::corpus::Review r;
    r.id = "r" + std::to_string(i);
    r.app_id = "app" + std::to_string(rng() % 17);
    r.app_category = "cat" + std::to_string(rng() % 5);
    const int len = 1 + static_cast<int>(rng() % 10);
    for (int k = 0; k < len; ++k) {
      if (k) r.text += ' ';
      r.text += words[rng() % words.size()];
    }
    c.reviews.push_back(std::move(r));
  }
  return c;
}

// ---- exhaustive CART -------------------------------------------------------

struct MicroData {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
};

inline MicroData random_micro(std::mt19937_64& rng) {
  MicroData d;
  const int n = 2 + static_cast<int>(rng() % 15);  // 2..16
  const int w = 1 + static_cast<int>(rng() % 3);   // 1..3
  const int levels = 2 + static_cast<int>(rng() % 4);
  for (int i = 0; i < n; ++i) {
    std::vector<double> x;
    for (int f = 0; f < w; ++f) x.push_back(static_cast<double>(rng() % levels) * 0.5);
    d.X.push_back(x);
    d.y.push_back(static_cast<int>(rng() % 2));
  }
  return d;
}

struct OracleNode {
  int feature = -1;
  double threshold = 0;
  int vote = 0;
  std::unique_ptr<OracleNode> left, right;
};

// Grows a full Gini tree: every candidate (feature, midpoint) pair is scored
// from scratch; the minimum weighted impurity wins, earliest feature then
// smallest threshold on exact ties. Leaves vote majority, 1 on ties.
inline std::unique_ptr<OracleNode> exhaustive_cart(const MicroData& d, const std::vector<int>& rows) {
  auto node = std::make_unique<OracleNode>();
  long c0 = 0, c1 = 0;
  for (int i : rows) (d.y[i] ? c1 : c0)++;
  node->vote = c1 >= c0 ? 1 : 0;
  if (c0 == 0 || c1 == 0) return node;

  // Impurity * n = sum_child (n_c - (a_c^2 + b_c^2) / n_c); kept as a fraction.
  bool found = false;
  long best_num = 0, best_den = 1;
  int best_f = -1;
  double best_t = 0;
  const int width = static_cast<int>(d.X[0].size());
  for (int f = 0; f < width; ++f) {
    std::set<double> values;
    for (int i : rows) values.insert(d.X[i][f]);
    std::vector<double> v(values.begin(), values.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double t = (v[k] + v[k + 1]) / 2;
      long l0 = 0, l1 = 0, r0 = 0, r1 = 0;
      for (int i : rows) {
        if (d.X[i][f] <= t) {
          (d.y[i] ? l1 : l0)++;
        } else {
          (d.y[i] ? r1 : r0)++;
        }
      }
      const long nl = l0 + l1, nr = r0 + r1;
      const long num = (nl * nl - l0 * l0 - l1 * l1) * nr + (nr * nr - r0 * r0 - r1 * r1) * nl;
      const long den = nl * nr;
      if (!found || num * best_den < best_num * den) {
        found = true;
        best_num = num;
        best_den = den;
        best_f = f;
        best_t = t;
      }
    }
  }
  if (!found) return node;
  node->feature = best_f;
  node->threshold = best_t;
  std::vector<int> l, r;
  for (int i : rows) (d.X[i][best_f] <= best_t ? l : r).push_back(i);
  node->left = exhaustive_cart(d, l);
  node->right = exhaustive_cart(d, r);
  return node;
}

inline int predict(const OracleNode& n, const std::vector<double>& x) {
  if (n.feature < 0) return n.vote;
  return predict(x[n.feature] <= n.threshold ? *n.left : *n.right, x);
}

// ---- folds -----------------------------------------------------------------

// Empty string when the plan is a valid partition with balanced sizes.
inline std::string check_fold_plan(const honesty::eval::FoldPlan& plan, std::size_t n) {
  if (plan.fold.size() != n) return "fold vector has wrong length";
  std::vector<std::size_t> sizes(plan.k, 0);
  std::vector<int> seen(n, 0);
  for (std::size_t f = 0; f < plan.k; ++f) {
    for (auto i : plan.test_rows(f)) {
      if (i >= n) return "row out of range";
      ++seen[i];
      ++sizes[f];
    }
    const auto train = plan.train_rows(f);
    if (train.size() + sizes[f] != n) return "train and test do not cover the data";
    for (auto i : train) {
      if (plan.fold[i] == f) return "row in both train and test";
    }
  }
  for (int s : seen) {
    if (s != 1) return "row not held out exactly once";
  }
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  if (*hi - *lo > 1) return "fold sizes differ by more than one";
  if (*lo == 0) return "empty fold";
  return {};
}

}  // namespace oracle

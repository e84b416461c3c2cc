#pragma once

// Cross-validation, grid search, confusion-matrix metrics and the random
// baseline comparison.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "honesty/models.hpp"

namespace honesty::eval {

inline constexpr std::size_t kDefaultFolds = 10;

struct FoldPlan {
  std::size_t k = kDefaultFolds;
  std::uint64_t seed = 0;
  bool stratified = true;
  std::vector<std::string> ids;    // dataset order
  std::vector<std::size_t> fold;   // fold index per dataset row

  std::vector<std::size_t> test_rows(std::size_t f) const;
  std::vector<std::size_t> train_rows(std::size_t f) const;
  std::vector<std::size_t> fold_sizes() const;
  std::size_t size() const { return fold.size(); }

  // Checks that the plan covers exactly this dataset, row for row.
  void check_covers(const models::Dataset& data) const;
};

// Seeded shuffle then round-robin assignment. Stratified plans shuffle each
// class separately and keep dealing from where the previous class stopped,
// so both overall fold sizes and per-class counts differ by at most one.
FoldPlan make_folds(const models::Dataset& data, std::size_t k, std::uint64_t seed, bool stratified = true);
FoldPlan make_folds(std::span<const int> labels, std::span<const std::string> ids, std::size_t k,
                    std::uint64_t seed, bool stratified = true);

// Counts (or fractions, for a normalized matrix) of held-out predictions.
struct ConfusionMatrix {
  double tp = 0, tn = 0, fp = 0, fn = 0;

  double total() const { return tp + tn + fp + fn; }
  void add(int truth, int predicted);
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
  ConfusionMatrix normalized() const;
};

struct Metrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, mcc = 0;
  // Set when the ratio had a zero denominator and was reported as 0.
  bool precision_undefined = false, recall_undefined = false, f1_undefined = false, mcc_undefined = false;
};

// Throws PreconditionError on an empty matrix.
Metrics metrics_from_confusion(const ConfusionMatrix& cm);

struct FoldResult {
  std::size_t fold = 0;
  ConfusionMatrix confusion;
  Metrics metrics;
};

struct ModelReport {
  std::string name;  // column label, e.g. "DNN"
  models::ModelSpec spec;
  ConfusionMatrix confusion;  // pooled counts
  Metrics metrics;            // from the pooled matrix
  std::vector<FoldResult> folds;
};

struct Baseline {
  std::size_t n_violations = 0;
  std::size_t n_total = 0;
  double precision = 0, recall = 0, f1 = 0;

  // Same baseline with the three rates rounded to `places` decimals, i.e.
  // the values as a report displays them.
  Baseline rounded(int places) const;
};

// A classifier that flags each review as a violation with probability 1/2:
// precision is the violation prevalence, recall is 1/2.
Baseline baseline_random(std::size_t n_violations, std::size_t n_total);

struct Improvement {
  double precision = 0, recall = 0, f1 = 0;
  bool precision_infinite = false, recall_infinite = false, f1_infinite = false;
};

Improvement improvement(double precision, double recall, double f1, const Baseline& baseline);
Improvement improvement(const Metrics& model, const Baseline& baseline);

inline constexpr int kReportSchemaVersion = 1;

struct EvalReport {
  std::vector<ModelReport> models;
  std::optional<Baseline> baseline;
  nlohmann::json meta = nlohmann::json::object();  // seed, folds, dataset size, provider...

  // Model with the highest F1 (then MCC); nullptr when empty.
  const ModelReport* best() const;
};

// Turns a training set into a predictor for one held-out fold.
using Predictor = std::function<int(std::span<const double>)>;
using FitFn = std::function<Predictor(const models::Dataset& train, std::size_t fold)>;

// Trains one model per fold and pools held-out predictions. Training errors
// are rethrown with the fold index in the message.
ModelReport cross_validate(const FitFn& fit, const models::Dataset& data, const FoldPlan& plan,
                           std::string name = "model");
ModelReport cross_validate(const models::ModelSpec& spec, const models::Dataset& data, const FoldPlan& plan);

struct GridPoint {
  models::ModelSpec spec;
  std::optional<ModelReport> report;
  std::string error;  // set when the point failed
};

struct GridResult {
  models::ModelSpec best;
  ModelReport report;
  std::vector<GridPoint> points;  // enumeration order
};

// Cartesian product of a {"key": [values...]} grid in sorted key order.
std::vector<nlohmann::json> expand_grid(const nlohmann::json& grid);

// Evaluates every grid point. Best = highest pooled F1, then higher MCC,
// then lexicographically smallest ModelSpec::encoding(). Failed points are
// recorded; throws only when every point fails.
GridResult grid_search(models::Family family, const nlohmann::json& grid, const models::Dataset& data,
                       const FoldPlan& plan, std::uint64_t seed = 0);

// True when `a` ranks above `b` under the grid-search rule.
bool ranks_above(const ModelReport& a, const ModelReport& b);

// Built-in per-family grids.
nlohmann::json default_grid(models::Family family);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const Baseline& b);
nlohmann::json to_json(const Improvement& i);
nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

enum class ReportFormat { Text, Csv, Json };
ReportFormat format_from_string(const std::string& name);

// CSV columns, in order:
//   model,accuracy,precision,recall,f1,mcc,tn,tp,fp,fn
// where tn..fn are fractions of the pooled held-out predictions.
inline constexpr const char* kCsvHeader = "model,accuracy,precision,recall,f1,mcc,tn,tp,fp,fn";

std::string render_report(const EvalReport& report, ReportFormat format);

}  // namespace honesty::eval

#include "honesty/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "builtin_data.hpp"
#include "honesty/error.hpp"
#include "honesty/rng.hpp"

namespace honesty::eval {

using nlohmann::json;

// ---------------------------------------------------------------- folds

std::vector<std::size_t> FoldPlan::test_rows(std::size_t f) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] == f) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::train_rows(std::size_t f) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] != f) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t f : fold) ++sizes.at(f);
  return sizes;
}

void FoldPlan::check_covers(const models::Dataset& data) const {
  if (fold.size() != data.size() || ids != data.ids) {
    throw PreconditionError("fold plan does not cover this dataset",
                            "plan rows=" + std::to_string(fold.size()) + " dataset rows=" + std::to_string(data.size()));
  }
  for (std::size_t f : fold) {
    if (f >= k) throw PreconditionError("fold plan assigns a fold index out of range");
  }
}

FoldPlan make_folds(std::span<const int> labels, std::span<const std::string> ids, std::size_t k,
                    std::uint64_t seed, bool stratified) {
  if (k < 2) throw PreconditionError("need at least 2 folds", "k=" + std::to_string(k));
  if (labels.size() != ids.size()) throw PreconditionError("labels and ids are misaligned");
  if (k > labels.size()) {
    throw PreconditionError("more folds than examples",
                            "k=" + std::to_string(k) + " n=" + std::to_string(labels.size()));
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.stratified = stratified;
  plan.ids.assign(ids.begin(), ids.end());
  plan.fold.assign(labels.size(), 0);

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> groups;
  if (stratified) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
    for (auto& [label, rows] : by_label) groups.push_back(std::move(rows));
  } else {
    groups.emplace_back(labels.size());
    std::iota(groups.back().begin(), groups.back().end(), std::size_t{0});
  }
  std::size_t dealt = 0;
  for (auto& rows : groups) {
    rng.shuffle(rows);
    for (std::size_t row : rows) plan.fold[row] = dealt++ % k;
  }
  return plan;
}

FoldPlan make_folds(const models::Dataset& data, std::size_t k, std::uint64_t seed, bool stratified) {
  return make_folds(data.y, data.ids, k, seed, stratified);
}

// ---------------------------------------------------------------- metrics

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth) {
    (predicted ? tp : fn) += 1;
  } else {
    (predicted ? fp : tn) += 1;
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionMatrix ConfusionMatrix::normalized() const {
  const double n = total();
  if (n <= 0) return {};
  return {tp / n, tn / n, fp / n, fn / n};
}

Metrics metrics_from_confusion(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.tn < 0 || cm.fp < 0 || cm.fn < 0) throw ValidationError("negative confusion entry");
  const double total = cm.total();
  if (!(total > 0)) throw PreconditionError("confusion matrix is empty");
  Metrics m;
  m.accuracy = (cm.tp + cm.tn) / total;

  auto ratio = [](double num, double den, bool& undefined) {
    if (den > 0) return num / den;
    undefined = true;
    return 0.0;
  };
  m.precision = ratio(cm.tp, cm.tp + cm.fp, m.precision_undefined);
  m.recall = ratio(cm.tp, cm.tp + cm.fn, m.recall_undefined);
  m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall, m.f1_undefined);
  if (m.precision_undefined || m.recall_undefined) m.f1_undefined = true;

  const double den = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn);
  m.mcc = den > 0 ? (cm.tp * cm.tn - cm.fp * cm.fn) / std::sqrt(den) : 0.0;
  m.mcc_undefined = !(den > 0);
  m.mcc = std::clamp(m.mcc, -1.0, 1.0);
  return m;
}

// ---------------------------------------------------------------- baseline

namespace {

double round_to(double v, int places) {
  const double scale = std::pow(10.0, places);
  return std::round(v * scale) / scale;
}

}  // namespace

Baseline Baseline::rounded(int places) const {
  Baseline b = *this;
  b.precision = round_to(precision, places);
  b.recall = round_to(recall, places);
  b.f1 = round_to(f1, places);
  return b;
}

Baseline baseline_random(std::size_t n_violations, std::size_t n_total) {
  if (n_total == 0) throw PreconditionError("baseline needs a nonempty corpus");
  if (n_violations > n_total) throw PreconditionError("more violations than reviews");
  Baseline b;
  b.n_violations = n_violations;
  b.n_total = n_total;
  b.precision = static_cast<double>(n_violations) / static_cast<double>(n_total);
  b.recall = 0.5;
  b.f1 = 2 * b.precision * b.recall / (b.precision + b.recall);
  return b;
}

Improvement improvement(double precision, double recall, double f1, const Baseline& baseline) {
  Improvement out;
  auto ratio = [](double model, double base, bool& infinite) {
    if (base > 0) return model / base;
    infinite = true;
    return std::numeric_limits<double>::infinity();
  };
  out.precision = ratio(precision, baseline.precision, out.precision_infinite);
  out.recall = ratio(recall, baseline.recall, out.recall_infinite);
  out.f1 = ratio(f1, baseline.f1, out.f1_infinite);
  return out;
}

Improvement improvement(const Metrics& model, const Baseline& baseline) {
  return improvement(model.precision, model.recall, model.f1, baseline);
}

// ---------------------------------------------------------------- cross-validation

bool ranks_above(const ModelReport& a, const ModelReport& b) {
  if (a.metrics.f1 != b.metrics.f1) return a.metrics.f1 > b.metrics.f1;
  if (a.metrics.mcc != b.metrics.mcc) return a.metrics.mcc > b.metrics.mcc;
  return a.spec.encoding() < b.spec.encoding();
}

const ModelReport* EvalReport::best() const {
  const ModelReport* best = nullptr;
  for (const auto& m : models) {
    if (!best || ranks_above(m, *best)) best = &m;
  }
  return best;
}

ModelReport cross_validate(const FitFn& fit, const models::Dataset& data, const FoldPlan& plan, std::string name) {
  plan.check_covers(data);
  ModelReport report;
  report.name = std::move(name);
  for (std::size_t f = 0; f < plan.k; ++f) {
    const auto test = plan.test_rows(f);
    const auto train_rows = plan.train_rows(f);
    Predictor predict;
    try {
      predict = fit(data.subset(train_rows), f);
    } catch (const Error& e) {
      throw Error(e.code(), "fold " + std::to_string(f) + ": " + e.what(), e.detail());
    }
    FoldResult fold;
    fold.fold = f;
    for (std::size_t row : test) {
      const auto x = std::span<const double>(data.X.data() + static_cast<Eigen::Index>(row) * data.X.cols(),
                                             static_cast<std::size_t>(data.X.cols()));
      fold.confusion.add(data.y[row], predict(x));
    }
    if (fold.confusion.total() > 0) fold.metrics = metrics_from_confusion(fold.confusion);
    report.confusion += fold.confusion;
    report.folds.push_back(fold);
  }
  report.metrics = metrics_from_confusion(report.confusion);
  return report;
}

ModelReport cross_validate(const models::ModelSpec& spec, const models::Dataset& data, const FoldPlan& plan) {
  const models::ModelSpec resolved = models::resolve(spec, data.width());
  FitFn fit = [&](const models::Dataset& train, std::size_t) -> Predictor {
    auto model = std::make_shared<models::TrainedModel>(models::train(resolved, train));
    return [model](std::span<const double> x) { return model->predict(x); };
  };
  ModelReport report = cross_validate(fit, data, plan, models::to_string(spec.family));
  report.spec = resolved;
  return report;
}

// ---------------------------------------------------------------- grid search

std::vector<json> expand_grid(const json& grid) {
  if (!grid.is_object()) throw ValidationError("grid must be an object of value lists");
  std::vector<json> points = {json::object()};
  // json objects iterate in sorted key order.
  for (const auto& [key, values] : grid.items()) {
    const json list = values.is_array() ? values : json::array({values});
    if (list.empty()) throw ValidationError("grid key '" + key + "' has no values");
    std::vector<json> next;
    for (const auto& p : points) {
      for (const auto& v : list) {
        json q = p;
        q[key] = v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

GridResult grid_search(models::Family family, const json& grid, const models::Dataset& data, const FoldPlan& plan,
                       std::uint64_t seed) {
  const auto points = expand_grid(grid);
  if (points.empty()) throw PreconditionError("empty grid");
  GridResult result;
  const ModelReport* best = nullptr;
  for (const auto& hyper : points) {
    GridPoint point;
    point.spec.family = family;
    point.spec.hyper = hyper;
    point.spec.seed = seed;
    try {
      point.report = cross_validate(point.spec, data, plan);
      point.spec = point.report->spec;
    } catch (const Error& e) {
      point.error = std::string(e.what());
      spdlog::warn("grid point {} failed: {}", point.spec.encoding(), point.error);
    }
    result.points.push_back(std::move(point));
  }
  for (const auto& p : result.points) {
    if (p.report && (!best || ranks_above(*p.report, *best))) best = &*p.report;
  }
  if (!best) {
    throw Error("grid_failed", "every grid point failed for " + models::to_string(family),
                result.points.front().error);
  }
  result.report = *best;
  result.best = best->spec;
  return result;
}

json default_grid(models::Family family) {
  static const json grids = json::parse(builtin::kGrids);
  const std::string key = models::short_name(family);
  if (!grids.contains(key)) return json::object();
  return grids.at(key);
}

// ---------------------------------------------------------------- JSON

json to_json(const ConfusionMatrix& cm) { return {{"tp", cm.tp}, {"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}}; }

json to_json(const Metrics& m) {
  json undefined = json::array();
  if (m.precision_undefined) undefined.push_back("precision");
  if (m.recall_undefined) undefined.push_back("recall");
  if (m.f1_undefined) undefined.push_back("f1");
  if (m.mcc_undefined) undefined.push_back("mcc");
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"mcc", m.mcc},             {"undefined", undefined}};
}

json to_json(const Baseline& b) {
  return {{"n_violations", b.n_violations}, {"n_total", b.n_total}, {"precision", b.precision},
          {"recall", b.recall},             {"f1", b.f1}};
}

namespace {

json ratio_json(double v, bool infinite) { return infinite ? json("inf") : json(v); }

ConfusionMatrix confusion_from_json(const json& j) {
  return {j.at("tp").get<double>(), j.at("tn").get<double>(), j.at("fp").get<double>(), j.at("fn").get<double>()};
}

Metrics metrics_from_json(const json& j) {
  Metrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.mcc = j.at("mcc").get<double>();
  for (const auto& u : j.value("undefined", json::array())) {
    const auto s = u.get<std::string>();
    m.precision_undefined |= s == "precision";
    m.recall_undefined |= s == "recall";
    m.f1_undefined |= s == "f1";
    m.mcc_undefined |= s == "mcc";
  }
  return m;
}

}  // namespace

json to_json(const Improvement& i) {
  return {{"precision", ratio_json(i.precision, i.precision_infinite)},
          {"recall", ratio_json(i.recall, i.recall_infinite)},
          {"f1", ratio_json(i.f1, i.f1_infinite)}};
}

json to_json(const EvalReport& report) {
  json models = json::array();
  for (const auto& m : report.models) {
    json folds = json::array();
    for (const auto& f : m.folds) {
      folds.push_back({{"fold", f.fold}, {"confusion", to_json(f.confusion)}, {"metrics", to_json(f.metrics)}});
    }
    models.push_back({{"name", m.name},
                      {"spec", models::to_json(m.spec)},
                      {"confusion", to_json(m.confusion)},
                      {"normalized", to_json(m.confusion.normalized())},
                      {"metrics", to_json(m.metrics)},
                      {"folds", folds}});
  }
  json j = {{"schema_version", kReportSchemaVersion}, {"meta", report.meta}, {"models", models}};
  if (report.baseline) {
    j["baseline"] = to_json(*report.baseline);
    if (const auto* best = report.best()) {
      j["improvement"] = {{"model", best->name}, {"ratios", to_json(improvement(best->metrics, *report.baseline))}};
    }
  }
  return j;
}

EvalReport report_from_json(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kReportSchemaVersion) {
      throw ValidationError("unsupported report schema version " + std::to_string(version));
    }
    EvalReport r;
    r.meta = j.value("meta", json::object());
    for (const auto& m : j.at("models")) {
      ModelReport mr;
      mr.name = m.at("name").get<std::string>();
      mr.spec = models::spec_from_json(m.at("spec"));
      mr.confusion = confusion_from_json(m.at("confusion"));
      mr.metrics = metrics_from_json(m.at("metrics"));
      for (const auto& f : m.value("folds", json::array())) {
        mr.folds.push_back({f.at("fold").get<std::size_t>(), confusion_from_json(f.at("confusion")),
                            metrics_from_json(f.at("metrics"))});
      }
      r.models.push_back(std::move(mr));
    }
    if (j.contains("baseline")) {
      const auto& b = j.at("baseline");
      Baseline base;
      base.n_violations = b.at("n_violations").get<std::size_t>();
      base.n_total = b.at("n_total").get<std::size_t>();
      base.precision = b.at("precision").get<double>();
      base.recall = b.at("recall").get<double>();
      base.f1 = b.at("f1").get<double>();
      r.baseline = base;
    }
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------- rendering

ReportFormat format_from_string(const std::string& name) {
  if (name == "text" || name == "txt") return ReportFormat::Text;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  throw ValidationError("unsupported report format '" + name + "'", "expected text, csv or json");
}

namespace {

std::string fixed(double v, int places) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string render_text(const EvalReport& report) {
  std::ostringstream out;
  constexpr std::size_t label_w = 16, col_w = 8;

  auto header = [&] {
    out << pad("", label_w);
    for (const auto& m : report.models) out << pad(m.name, col_w);
    out << "\n";
  };
  auto line = [&](const std::string& label, auto value) {
    out << pad(label, label_w);
    for (const auto& m : report.models) out << pad(fixed(value(m), 3), col_w);
    out << "\n";
  };

  out << "Confusion matrix (fraction of held-out predictions) and MCC\n";
  header();
  line("True negative", [](const ModelReport& m) { return m.confusion.normalized().tn; });
  line("True positive", [](const ModelReport& m) { return m.confusion.normalized().tp; });
  line("False positive", [](const ModelReport& m) { return m.confusion.normalized().fp; });
  line("False negative", [](const ModelReport& m) { return m.confusion.normalized().fn; });
  line("MCC", [](const ModelReport& m) { return m.metrics.mcc; });
  out << "\nClassification metrics\n";
  header();
  line("Accuracy", [](const ModelReport& m) { return m.metrics.accuracy; });
  line("Precision", [](const ModelReport& m) { return m.metrics.precision; });
  line("Recall", [](const ModelReport& m) { return m.metrics.recall; });
  line("F1 score", [](const ModelReport& m) { return m.metrics.f1; });

  const ModelReport* best = report.best();
  if (report.baseline && best) {
    const Baseline& b = *report.baseline;
    const Improvement imp = improvement(best->metrics, b);
    out << "\nBaseline comparison (" << b.n_violations << " violations in " << b.n_total << " reviews)\n";
    out << pad("", label_w) << pad("Precision", 11) << pad("Recall", 11) << "F1\n";
    out << pad(best->name, label_w) << pad(fixed(best->metrics.precision, 3), 11)
        << pad(fixed(best->metrics.recall, 3), 11) << fixed(best->metrics.f1, 3) << "\n";
    out << pad("Random", label_w) << pad(fixed(b.precision, 4), 11) << pad(fixed(b.recall, 4), 11)
        << fixed(b.f1, 4) << "\n";
    out << pad("Improvement", label_w) << pad(fixed(imp.precision, 3) + "x", 11)
        << pad(fixed(imp.recall, 3) + "x", 11) << fixed(imp.f1, 3) << "x\n";
  }
  // Column padding leaves trailing blanks; drop them.
  std::string text = out.str(), trimmed;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string line = text.substr(start, nl - start);
    line.erase(line.find_last_not_of(' ') + 1);
    trimmed += line + "\n";
    start = nl + 1;
  }
  return trimmed;
}

std::string render_csv(const EvalReport& report) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const auto& m : report.models) {
    const auto n = m.confusion.normalized();
    out << m.name;
    for (double v : {m.metrics.accuracy, m.metrics.precision, m.metrics.recall, m.metrics.f1, m.metrics.mcc, n.tn,
                     n.tp, n.fp, n.fn}) {
      out << "," << fixed(v, 6);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace

std::string render_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Text: return render_text(report);
    case ReportFormat::Csv: return render_csv(report);
    case ReportFormat::Json: return to_json(report).dump(2) + "\n";
  }
  throw ValidationError("unsupported report format");
}

}  // namespace honesty::eval

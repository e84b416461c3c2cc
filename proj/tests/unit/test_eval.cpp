#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "../common/oracles.hpp"
#include "../common/reference_tables.hpp"
#include "honesty/error.hpp"
#include "honesty/eval.hpp"

using namespace honesty;
using namespace honesty::eval;
using nlohmann::json;

namespace {

models::Dataset labels_only(std::vector<int> y) {
  models::Dataset d;
  d.X = models::Matrix::Zero(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    d.X(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
    d.ids.push_back("r" + std::to_string(i));
  }
  d.y = std::move(y);
  return d;
}

std::vector<int> alternating(std::size_t n, std::size_t positives) {
  std::vector<int> y(n, 0);
  for (std::size_t i = 0; i < positives; ++i) y[i] = 1;
  return y;
}

ModelReport report_with(const std::string& name, double f1, double mcc, models::ModelSpec spec = {}) {
  ModelReport r;
  r.name = name;
  r.metrics.f1 = f1;
  r.metrics.mcc = mcc;
  r.spec = std::move(spec);
  return r;
}

}  // namespace

TEST_CASE("802 examples in 10 folds") {
  const auto data = labels_only(alternating(802, 401));
  const auto plan = make_folds(data, 10, 7);
  auto sizes = plan.fold_sizes();
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{80, 80, 80, 80, 80, 80, 80, 80, 81, 81});
  CHECK(oracle::check_fold_plan(plan, 802).empty());
  for (std::size_t f = 0; f < 10; ++f) {
    std::size_t pos = 0;
    for (auto i : plan.test_rows(f)) pos += data.y[i];
    CHECK(pos >= 40);
    CHECK(pos <= 41);
  }
}

TEST_CASE("fold plans on 100 random (n, k) pairs") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 400;
    const std::size_t k = 2 + rng() % std::min<std::size_t>(n - 1, 25);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    const auto data = labels_only(y);
    for (bool stratified : {true, false}) {
      INFO("n=" << n << " k=" << k << " stratified=" << stratified);
      const auto plan = make_folds(data, k, rng(), stratified);
      REQUIRE(oracle::check_fold_plan(plan, n).empty());
      plan.check_covers(data);
      if (stratified) {
        for (int cls : {0, 1}) {
          std::vector<std::size_t> per(k, 0);
          for (std::size_t i = 0; i < n; ++i) per[plan.fold[i]] += data.y[i] == cls;
          const auto [lo, hi] = std::minmax_element(per.begin(), per.end());
          REQUIRE(*hi - *lo <= 1);
        }
      }
    }
  }
}

TEST_CASE("fold plans are seeded and validated") {
  const auto data = labels_only(alternating(50, 20));
  CHECK(make_folds(data, 5, 1).fold == make_folds(data, 5, 1).fold);
  CHECK(make_folds(data, 5, 1).fold != make_folds(data, 5, 2).fold);
  CHECK_THROWS_AS(make_folds(data, 1, 1), PreconditionError);
  CHECK_THROWS_AS(make_folds(data, 51, 1), PreconditionError);
  auto other = data;
  other.ids[3] = "zzz";
  CHECK_THROWS(make_folds(data, 5, 1).check_covers(other));
}

TEST_CASE("metrics from confusion: definitions") {
  ConfusionMatrix cm{40, 30, 10, 20};  // tp, tn, fp, fn
  const auto m = metrics_from_confusion(cm);
  CHECK(m.accuracy == doctest::Approx(0.7));
  CHECK(m.precision == doctest::Approx(0.8));
  CHECK(m.recall == doctest::Approx(40.0 / 60.0));
  CHECK(m.f1 == doctest::Approx(2 * 0.8 * (2.0 / 3.0) / (0.8 + 2.0 / 3.0)));
  CHECK(m.mcc == doctest::Approx((40.0 * 30 - 10.0 * 20) / std::sqrt(50.0 * 60 * 40 * 50)));
  // Scale invariance: counts and fractions agree.
  const auto n = metrics_from_confusion(cm.normalized());
  CHECK(n.mcc == doctest::Approx(m.mcc));
  CHECK(n.f1 == doctest::Approx(m.f1));
}

TEST_CASE("metrics with zero denominators are flagged") {
  const auto all_negative = metrics_from_confusion({0, 10, 0, 0});
  CHECK(all_negative.accuracy == 1.0);
  CHECK(all_negative.precision_undefined);
  CHECK(all_negative.recall_undefined);
  CHECK(all_negative.f1_undefined);
  CHECK(all_negative.mcc_undefined);
  CHECK(all_negative.precision == 0.0);
  const auto no_hits = metrics_from_confusion({0, 5, 5, 0});
  CHECK(no_hits.precision == 0.0);
  CHECK_FALSE(no_hits.precision_undefined);
  CHECK(no_hits.recall_undefined);
  CHECK_THROWS_AS(metrics_from_confusion({}), PreconditionError);
}

TEST_CASE("metric algebra on the published confusion columns") {
  for (const auto& col : reference::kColumns) {
    INFO(col.name);
    const auto m = metrics_from_confusion({col.tp, col.tn, col.fp, col.fn});
    const double tol = 0.002;
    const bool consistent = std::string(col.name) != "RF";
    if (consistent) {
      CHECK(std::abs(m.accuracy - col.accuracy) <= tol);
      CHECK(std::abs(m.precision - col.precision) <= tol);
      CHECK(std::abs(m.recall - col.recall) <= tol);
      CHECK(std::abs(m.f1 - col.f1) <= tol);
      CHECK(std::abs(m.mcc - col.mcc) <= tol);
    } else {
      // The RF false-positive cell does not match its own metric row; with
      // 7/81 in that cell every value agrees.
      CHECK(std::abs(m.precision - col.precision) > tol);
      const auto fixed = metrics_from_confusion({col.tp, col.tn, 7.0 / 81.0, col.fn});
      CHECK(std::abs(fixed.accuracy - col.accuracy) <= tol);
      CHECK(std::abs(fixed.precision - col.precision) <= tol);
      CHECK(std::abs(fixed.recall - col.recall) <= tol);
      CHECK(std::abs(fixed.f1 - col.f1) <= tol);
      CHECK(std::abs(fixed.mcc - col.mcc) <= tol);
    }
  }
}

TEST_CASE("random baseline and improvement ratios") {
  const auto b = baseline_random(401, 236660);
  CHECK(b.precision == doctest::Approx(401.0 / 236660.0));
  CHECK(b.recall == 0.5);
  const auto r = b.rounded(4);
  CHECK(r.precision == 0.0017);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.0034);
  const auto imp = improvement(0.911, 0.932, 0.921, r);
  CHECK(std::abs(imp.precision - 535.882) <= 0.5);
  CHECK(std::abs(imp.recall - 1.864) <= 0.5);
  CHECK(std::abs(imp.f1 - 270.882) <= 0.5);
  const auto none = improvement(0.5, 0.5, 0.5, baseline_random(0, 10));
  CHECK(none.precision_infinite);
  CHECK(none.f1_infinite);
  CHECK_FALSE(none.recall_infinite);
  CHECK_THROWS_AS(baseline_random(5, 0), PreconditionError);
  CHECK_THROWS_AS(baseline_random(11, 10), PreconditionError);
}

TEST_CASE("cross_validate pools held-out predictions exactly") {
  std::mt19937_64 rng(5);
  std::vector<int> y(57);
  for (auto& v : y) v = static_cast<int>(rng() % 2);
  y[0] = 0;
  y[1] = 1;
  const auto data = labels_only(y);
  const auto plan = make_folds(data, 6, 3);
  // Predicts 1 on rows whose index is divisible by 3.
  std::vector<std::size_t> trained_sizes;
  const auto rep = cross_validate(
      [&](const models::Dataset& train, std::size_t) -> Predictor {
        trained_sizes.push_back(train.size());
        return [](std::span<const double> x) { return static_cast<int>(x[0]) % 3 == 0 ? 1 : 0; };
      },
      data, plan, "stub");
  ConfusionMatrix expect;
  for (std::size_t i = 0; i < y.size(); ++i) expect.add(y[i], i % 3 == 0 ? 1 : 0);
  CHECK(rep.confusion.tp == expect.tp);
  CHECK(rep.confusion.tn == expect.tn);
  CHECK(rep.confusion.fp == expect.fp);
  CHECK(rep.confusion.fn == expect.fn);
  CHECK(rep.folds.size() == 6);
  CHECK(rep.name == "stub");
  for (std::size_t f = 0; f < 6; ++f) CHECK(trained_sizes[f] == 57 - plan.test_rows(f).size());

  const auto always = cross_validate(
      [](const models::Dataset&, std::size_t) -> Predictor { return [](std::span<const double>) { return 1; }; },
      data, plan);
  const double prevalence = static_cast<double>(data.count(1)) / 57.0;
  CHECK(always.metrics.recall == 1.0);
  CHECK(always.metrics.precision == doctest::Approx(prevalence));

  CHECK_THROWS_WITH(cross_validate(
                        [](const models::Dataset&, std::size_t f) -> Predictor {
                          if (f == 2) throw ValidationError("boom");
                          return [](std::span<const double>) { return 0; };
                        },
                        data, plan),
                    doctest::Contains("fold 2"));
}

TEST_CASE("grid ranking rule") {
  models::ModelSpec a{models::Family::LR, {{"l2", 0.0}}, 0};
  models::ModelSpec b{models::Family::LR, {{"l2", 0.1}}, 0};
  CHECK(ranks_above(report_with("x", 0.9, 0.5, a), report_with("y", 0.8, 0.9, a)));
  CHECK(ranks_above(report_with("x", 0.9, 0.6, b), report_with("y", 0.9, 0.5, a)));
  CHECK(ranks_above(report_with("x", 0.9, 0.5, a), report_with("y", 0.9, 0.5, b)));
  CHECK_FALSE(ranks_above(report_with("x", 0.9, 0.5, b), report_with("y", 0.9, 0.5, a)));
}

TEST_CASE("grid expansion and order invariance") {
  const auto points = expand_grid({{"b", {1, 2}}, {"a", {"x", "y", "z"}}, {"c", 5}});
  REQUIRE(points.size() == 6);
  CHECK(points[0] == json{{"a", "x"}, {"b", 1}, {"c", 5}});
  CHECK(points[1] == json{{"a", "x"}, {"b", 2}, {"c", 5}});

  const auto data = models::gaussian_clusters(60, 4, 2, 0.4, 3);
  const auto plan = make_folds(data, 3, 1);
  const json g1 = {{"l2", {0.0, 0.5, 5.0}}, {"epochs", {20}}};
  const json g2 = {{"epochs", {20}}, {"l2", {5.0, 0.0, 0.5}}};
  const auto r1 = grid_search(models::Family::LR, g1, data, plan, 1);
  const auto r2 = grid_search(models::Family::LR, g2, data, plan, 1);
  CHECK(r1.best.encoding() == r2.best.encoding());
  CHECK(r1.points.size() == 3);
  for (const auto& p : r1.points) {
    REQUIRE(p.report);
    CHECK_FALSE(ranks_above(*p.report, r1.report));
  }
  const auto failing = grid_search(models::Family::LR, {{"l2", {-1.0, 0.0}}}, data, plan, 1);
  CHECK(failing.points.size() == 2);
  CHECK_FALSE(failing.points[0].error.empty());
  CHECK(failing.best.hyper.at("l2") == 0.0);
  CHECK_THROWS(grid_search(models::Family::LR, {{"l2", {-1.0}}}, data, plan, 1));
}

TEST_CASE("default grids parse for every family") {
  for (auto f : models::kAllFamilies) {
    const auto g = default_grid(f);
    CHECK(g.is_object());
    for (const auto& p : expand_grid(g)) CHECK_NOTHROW(models::resolve({f, p, 0}));
  }
}

TEST_CASE("report json round trip, csv and text rendering") {
  const auto report = reference::published_report();
  const json j = to_json(report);
  CHECK(j.at("schema_version") == kReportSchemaVersion);
  CHECK(to_json(report_from_json(j)) == j);
  CHECK(report.best()->name == "DNN");

  const std::string csv = render_report(report, ReportFormat::Csv);
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header == kCsvHeader);
  int rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  CHECK(rows == 7);
  CHECK(csv.find("SVM,0.889") != std::string::npos);

  std::ifstream golden(HV_TEST_DATA "/golden/table3.txt");
  REQUIRE(golden);
  const std::string expected((std::istreambuf_iterator<char>(golden)), {});
  CHECK(render_report(report, ReportFormat::Text) == expected);
  CHECK(format_from_string("json") == ReportFormat::Json);
  CHECK_THROWS_AS(format_from_string("xml"), ValidationError);
}

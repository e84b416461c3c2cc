#include "honesty/taxonomy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <spdlog/spdlog.h>

#include "builtin_data.hpp"
#include "honesty/error.hpp"

namespace honesty::taxonomy {

using nlohmann::json;

namespace {

std::vector<ViolationCategory> parse_taxonomy() {
  const json j = json::parse(builtin::kTaxonomy);
  std::vector<ViolationCategory> out;
  for (const auto& c : j.at("categories")) {
    out.push_back({c.at("code").get<std::string>(), c.at("display_name").get<std::string>(),
                   c.at("definition").get<std::string>()});
  }
  return out;
}

}  // namespace

const std::vector<ViolationCategory>& categories() {
  static const std::vector<ViolationCategory> list = parse_taxonomy();
  return list;
}

const ViolationCategory* find_category(const std::string& code) {
  for (const auto& c : categories()) {
    if (c.code == code) return &c;
  }
  return nullptr;
}

bool is_known(const std::string& code) { return find_category(code) != nullptr; }

json taxonomy_json() { return json::parse(builtin::kTaxonomy); }

json to_json(const CategoryAssignment& a) {
  return {{"review_id", a.review_id},
          {"categories", a.categories},
          {"annotator", a.annotator},
          {"round", a.round},
          {"timestamp", a.timestamp}};
}

CategoryAssignment assignment_from_json(const json& j) {
  CategoryAssignment a;
  a.review_id = j.at("review_id").get<std::string>();
  a.categories = j.at("categories").get<std::vector<std::string>>();
  a.annotator = j.value("annotator", std::string{});
  a.round = j.value("round", 0);
  a.timestamp = j.value("timestamp", std::string{});
  return a;
}

std::vector<CategoryAssignment> load_assignments(std::istream& in) {
  std::vector<CategoryAssignment> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(assignment_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError("malformed assignment on line " + std::to_string(number), e.what());
    }
  }
  return out;
}

std::vector<CategoryAssignment> load_assignments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read assignments: " + path.string(), path.string());
  return load_assignments(in);
}

void write_assignments(std::ostream& out, const std::vector<CategoryAssignment>& assignments) {
  for (const auto& a : assignments) out << to_json(a).dump() << "\n";
}

std::string format_percentage(std::size_t count, std::size_t denominator) {
  if (denominator == 0) return "0%";
  const double pct = 100.0 * static_cast<double>(count) / static_cast<double>(denominator);
  char buf[32];
  if (pct > 0 && pct < 2.0) {
    std::snprintf(buf, sizeof buf, "%.1f%%", std::round(pct * 10.0) / 10.0);
  } else {
    std::snprintf(buf, sizeof buf, "%.0f%%", std::round(pct));
  }
  return buf;
}

const FrequencyRow& FrequencyReport::row(const std::string& code) const {
  for (const auto& r : rows) {
    if (r.code == code) return r;
  }
  throw NotFoundError("no category " + code);
}

FrequencyReport frequency_report(const std::vector<CategoryAssignment>& assignments,
                                 std::optional<std::size_t> denominator) {
  // Latest submission per (review, annotator). Sorting the key makes the
  // outcome independent of input order even for identical timestamps.
  using Key = std::pair<std::string, std::string>;
  using Order = std::tuple<int, std::string, std::vector<std::string>>;
  std::map<Key, std::pair<Order, const CategoryAssignment*>> latest;
  for (const auto& a : assignments) {
    auto cats = a.categories;
    std::sort(cats.begin(), cats.end());
    Order order{a.round, a.timestamp, std::move(cats)};
    auto [it, inserted] = latest.try_emplace({a.review_id, a.annotator}, order, &a);
    if (!inserted && it->second.first < order) it->second = {std::move(order), &a};
  }

  FrequencyReport report;
  std::map<std::string, std::set<std::string>> per_review;
  for (const auto& [key, entry] : latest) {
    for (const auto& code : entry.second->categories) {
      if (!is_known(code)) {
        ++report.ignored_codes;
        continue;
      }
      per_review[key.first].insert(code);
    }
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& [review, codes] : per_review) {
    if (codes.empty()) continue;
    ++report.categorized_reviews;
    for (const auto& c : codes) ++counts[c];
  }
  if (report.ignored_codes > 0) spdlog::warn("frequency report skipped {} unknown category codes", report.ignored_codes);

  report.denominator = denominator.value_or(report.categorized_reviews);
  for (const auto& c : categories()) {
    FrequencyRow row;
    row.code = c.code;
    row.display_name = c.display_name;
    row.count = counts[c.code];
    row.percent = report.denominator ? 100.0 * static_cast<double>(row.count) / static_cast<double>(report.denominator)
                                     : 0.0;
    row.display = std::to_string(row.count) + " (" + format_percentage(row.count, report.denominator) + ")";
    report.rows.push_back(std::move(row));
  }
  return report;
}

json to_json(const FrequencyReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"code", r.code},
                    {"display_name", r.display_name},
                    {"count", r.count},
                    {"percent", r.percent},
                    {"display", format_percentage(r.count, report.denominator)}});
  }
  return {{"denominator", report.denominator},
          {"categorized_reviews", report.categorized_reviews},
          {"ignored_codes", report.ignored_codes},
          {"categories", rows}};
}

std::string render_frequency(const FrequencyReport& report) {
  std::size_t width = 0;
  for (const auto& r : report.rows) width = std::max(width, r.display_name.size());
  std::ostringstream out;
  out << "Honesty violation categories (out of " << report.denominator << " reviews)\n";
  for (const auto& r : report.rows) {
    out << r.display_name << std::string(width + 2 - r.display_name.size(), ' ') << r.display << "\n";
  }
  return out.str();
}

std::vector<std::string> validate_assignment(const CategoryAssignment& assignment,
                                             const ViolationLookup& is_violation) {
  std::vector<std::string> findings;
  const auto label = is_violation ? is_violation(assignment.review_id) : std::nullopt;
  if (!label || !*label) findings.push_back("not a violation");
  if (assignment.categories.empty()) findings.push_back("empty category set");
  for (const auto& code : assignment.categories) {
    if (!is_known(code)) {
      findings.push_back("unknown category");
      break;
    }
  }
  return findings;
}

}  // namespace honesty::taxonomy

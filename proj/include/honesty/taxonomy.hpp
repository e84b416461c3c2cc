#pragma once

// Ten-category vocabulary for describing what kind of honesty violation a
// review reports, plus per-category frequency reporting. Assignments are
// multi-label: one review may carry several categories.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace honesty::taxonomy {

struct ViolationCategory {
  std::string code;          // e.g. "UNFAIR_FEES"
  std::string display_name;  // e.g. "Unfair fees"
  std::string definition;
};

// The bundled vocabulary in its canonical order.
const std::vector<ViolationCategory>& categories();
const ViolationCategory* find_category(const std::string& code);
bool is_known(const std::string& code);
nlohmann::json taxonomy_json();

struct CategoryAssignment {
  std::string review_id;
  std::vector<std::string> categories;
  std::string annotator;
  int round = 0;
  std::string timestamp;  // ISO 8601; orders repeated submissions
};

nlohmann::json to_json(const CategoryAssignment& a);
CategoryAssignment assignment_from_json(const nlohmann::json& j);
// Throws ValidationError naming the line on malformed input.
std::vector<CategoryAssignment> load_assignments(std::istream& in);
std::vector<CategoryAssignment> load_assignments(const std::filesystem::path& path);
void write_assignments(std::ostream& out, const std::vector<CategoryAssignment>& assignments);

// Counts are whole reviews; percentages are rounded for display only:
// to a whole percent, or to one decimal below 2%.
std::string format_percentage(std::size_t count, std::size_t denominator);

struct FrequencyRow {
  std::string code;
  std::string display_name;
  std::size_t count = 0;
  double percent = 0;   // unrounded
  std::string display;  // e.g. "106 (26%)"
};

struct FrequencyReport {
  std::vector<FrequencyRow> rows;  // canonical category order
  std::size_t categorized_reviews = 0;
  std::size_t denominator = 0;
  std::size_t ignored_codes = 0;  // unknown codes skipped

  const FrequencyRow& row(const std::string& code) const;
};

// Per (review, annotator) the latest submission wins, ordered by
// (round, timestamp); a review then carries the union of its annotators'
// categories. The denominator is the number of distinct categorized reviews
// unless `denominator` overrides it (e.g. the full violation count).
FrequencyReport frequency_report(const std::vector<CategoryAssignment>& assignments,
                                 std::optional<std::size_t> denominator = std::nullopt);

nlohmann::json to_json(const FrequencyReport& report);
std::string render_frequency(const FrequencyReport& report);

// Returns findings; empty means the assignment is acceptable. `is_violation`
// answers for a review id whether it is labeled a violation (nullopt when
// the review is not labeled at all).
using ViolationLookup = std::function<std::optional<bool>(const std::string& review_id)>;
std::vector<std::string> validate_assignment(const CategoryAssignment& assignment, const ViolationLookup& is_violation);

}  // namespace honesty::taxonomy

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace chartlab::chartgen {

enum class ChartType { bar, line, dotline };
enum class LineStyle { solid, dotted, dashed };
enum class QaKind { value_lookup, count, min_series, max_series, compare_binary, title };

std::string_view to_string(ChartType t);
std::string_view to_string(LineStyle s);
std::string_view to_string(QaKind k);
ChartType parse_chart_type(std::string_view s);
LineStyle parse_line_style(std::string_view s);
QaKind parse_qa_kind(std::string_view s);

inline constexpr std::array<QaKind, 6> kAllQaKinds = {QaKind::value_lookup, QaKind::count,
                                                     QaKind::min_series,   QaKind::max_series,
                                                     QaKind::compare_binary, QaKind::title};

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Twelve series colours; every pair differs by at least 60 in some channel,
/// and every colour differs from black and white by at least 60.
const std::array<Rgb, 12>& palette();

struct Series {
  std::string name;
  int color_index = 0;
  LineStyle line_style = LineStyle::solid;
  std::vector<double> values;
  friend bool operator==(const Series&, const Series&) = default;
};

struct ChartSpec {
  std::string chart_id;
  ChartType chart_type = ChartType::bar;
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> categories;
  std::vector<Series> series;
  double y_min = 0.0;
  double y_max = 100.0;
  std::uint64_t style_seed = 0;
  friend bool operator==(const ChartSpec&, const ChartSpec&) = default;
};

/// Throws ContractError describing the first violated invariant.
void validate(const ChartSpec& spec);

struct QARecord {
  std::string qa_id;
  std::string chart_id;
  QaKind kind = QaKind::title;
  std::string question;
  std::string answer;
  bool answer_is_numeric = false;
  // Template slots; empty when the kind does not use them.
  std::string series;
  std::string category;
  std::string series2;    // compare_binary right-hand side
  std::string category2;  // compare_binary right-hand side
  friend bool operator==(const QARecord&, const QARecord&) = default;
};

/// Closed word pools the generator draws from.
namespace pools {
const std::vector<std::string>& series_names();
const std::vector<std::string>& titles();
const std::vector<std::string>& y_labels();
inline constexpr int kFirstYear = 1985;
inline constexpr int kLastYear = 2020;
}  // namespace pools

/// Every lowercase word that can appear in a positive or negative caption,
/// excluding numbers (those are tokenized per character).
std::vector<std::string> caption_vocabulary();

struct IntRange {
  int min = 0;
  int max = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct GeneratorConfig {
  int n_train = 160;
  int n_eval = 40;
  std::uint64_t seed = 1;
  IntRange series_count{1, 4};
  IntRange category_count{2, 8};
  double value_min = 0.0;
  double value_max = 100.0;
  std::vector<ChartType> chart_types{ChartType::bar, ChartType::line, ChartType::dotline};
  std::vector<QaKind> qa_kinds{kAllQaKinds.begin(), kAllQaKinds.end()};
  int value_lookups_per_chart = 1;
  int resolution = 64;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

/// Throws ConfigError naming the offending field.
void validate(const GeneratorConfig& config);

/// Deterministic textual form of every field; the basis of the config digest.
std::string describe(const GeneratorConfig& config);

/// Samples a chart from `seed`. Values are canonicalized to one decimal.
ChartSpec sample_chart_spec(std::uint64_t seed, const GeneratorConfig& config);

/// Questions with answers computed from `spec`. Kinds a chart cannot support
/// (extreme or comparison questions on single-series charts, ties) are skipped.
std::vector<QARecord> generate_qa(const ChartSpec& spec, std::uint64_t seed,
                                  const std::set<QaKind>& kinds, int value_lookups = 1);

/// Assertive sentence for a QA pair.
std::string caption_from_qa(const QARecord& qa);

/// Value of `series` at `category`, if both exist.
std::optional<double> lookup_value(const ChartSpec& spec, std::string_view series, std::string_view category);

}  // namespace chartlab::chartgen

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chartlab/chartgen/chart_spec.hpp"
#include "chartlab/chartgen/dataset.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"

namespace chartlab::negcap {

using chartgen::CaptionRecord;
using chartgen::Strategy;

struct NegativeConfig {
  int k = 3;
  double numeric_min_rel = 0.05;
  double numeric_max_rel = 0.80;
  /// Absolute offset range used when the ground truth is 0.
  std::pair<double, double> zero_fallback{1.0, 10.0};
  std::vector<std::string> title_pool = chartgen::pools::titles();
  /// Weight 0 disables a strategy; missing entries count as 1.
  std::map<Strategy, double> strategy_weights;
  std::uint64_t seed = 1;
};

/// Throws ConfigError naming the offending field.
void validate(const NegativeConfig& config);
bool enabled(const NegativeConfig& config, Strategy s);

/// Raised when fewer than K distinct negatives exist for a QA pair.
class SynthesisError : public Error {
 public:
  SynthesisError(std::string qa_id, int achievable, int requested);
  const std::string& qa_id() const noexcept { return qa_id_; }
  int achievable() const noexcept { return achievable_; }
  int requested() const noexcept { return requested_; }

 private:
  std::string qa_id_;
  int achievable_;
  int requested_;
};

enum class NumberFormat { one_decimal, integer };

std::string flip_binary(std::string_view answer);

/// Returns v' with min_rel <= |v'-v|/|v| <= max_rel after canonical rounding.
/// Ground truth 0 draws a positive offset from zero_fallback instead.
/// Throws ContractError if no printable value satisfies the band (e.g. |v| = 0.1).
double perturb_numeric(double value, const NegativeConfig& config, Rng& rng,
                       NumberFormat format = NumberFormat::one_decimal);

std::string substitute_categorical(std::string_view answer, const std::vector<std::string>& labels, Rng& rng);
std::string perturb_title(std::string_view title, const NegativeConfig& config, Rng& rng);
std::string shuffle_words(std::string_view caption, Rng& rng);

/// Primary strategy for a QA kind.
Strategy strategy_for(chartgen::QaKind kind);

/// Exactly config.k hard negatives for `qa`, deterministic in (qa_id, seed).
std::vector<CaptionRecord> synthesize_negatives(const chartgen::QARecord& qa, const chartgen::ChartSpec& spec,
                                                const NegativeConfig& config);

/// Replaces every entry's negatives with freshly synthesized ones.
void add_negatives(chartgen::Dataset& dataset, const NegativeConfig& config, int threads = 1);

/// Deterministic textual form of the config, for digests.
std::string describe(const NegativeConfig& config);

}  // namespace chartlab::negcap

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "chartlab/chartgen/dataset.hpp"
#include "chartlab/dualenc/encoder.hpp"

namespace chartlab::evalkit {

using chartgen::Strategy;

struct RetrievalInstance {
  std::size_t entry = 0;  ///< index into Dataset::entries
  std::string chart_id;
  std::string qa_id;
  std::string image_path;
  chartgen::QaKind kind = chartgen::QaKind::title;
  std::vector<std::string> candidates;
  std::size_t positive_index = 0;
  /// Per candidate; Strategy::none marks the positive.
  std::vector<Strategy> candidate_strategies;
  /// The instance's negative strategy: the first non-word_order strategy
  /// among its negatives, or word_order when all are fillers.
  Strategy strategy = Strategy::none;
};

/// One instance per QA with its positive and first K negatives, order
/// shuffled by (qa_id, seed). Throws ContractError naming a QA short of negatives.
std::vector<RetrievalInstance> build_retrieval_instances(const chartgen::Dataset& data, int k, std::uint64_t seed);

struct InstanceResult {
  std::size_t instance = 0;
  std::string chart_id;
  std::string qa_id;
  chartgen::QaKind kind = chartgen::QaKind::title;
  Strategy strategy = Strategy::none;
  std::size_t predicted = 0;
  std::size_t positive_index = 0;
  bool correct = false;
  std::vector<double> scores;
};

struct Tally {
  std::size_t correct = 0;
  std::size_t n = 0;
  double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n); }
};

struct RetrievalReport {
  Tally overall;
  std::map<std::string, Tally> per_kind;
  std::map<std::string, Tally> per_strategy;
  std::size_t candidate_count = 0;  ///< K + 1
  double random_baseline = 0.0;     ///< 1 / (K + 1)
};

/// Lowest index among the maxima.
std::size_t argmax_first(const std::vector<double>& scores);

/// Scores every instance from precomputed similarities (one vector per
/// instance, aligned with its candidates) and aggregates.
RetrievalReport score_instances(const std::vector<RetrievalInstance>& instances,
                                const std::vector<std::vector<double>>& similarities,
                                std::vector<InstanceResult>* results = nullptr);

/// Raw-cosine retrieval with the dual encoder.
RetrievalReport evaluate_retrieval(const num::ParamSet& params, const dualenc::EncoderConfig& encoder,
                                   const chartgen::Dataset& data, const std::vector<RetrievalInstance>& instances,
                                   std::vector<InstanceResult>* results = nullptr);

/// Cosine similarities per instance, exposed so callers can reuse them.
std::vector<std::vector<double>> retrieval_similarities(const num::ParamSet& params,
                                                        const dualenc::EncoderConfig& encoder,
                                                        const chartgen::Dataset& data,
                                                        const std::vector<RetrievalInstance>& instances);

std::string report_json(const RetrievalReport& report, std::string_view variant = {});
std::string results_jsonl(const std::vector<InstanceResult>& results);

/// Table 1 layout: one row per variant, accuracy columns per QA kind.
std::string comparison_csv(const std::vector<std::pair<std::string, RetrievalReport>>& rows);

struct MetricConfig {
  double relaxed_tolerance = 0.05;
};

/// Trimmed, lowercased, with numbers canonicalized ("24" == "24.0").
std::string normalize_answer(std::string_view s);
bool exact_match(std::string_view prediction, std::string_view truth);
/// |p - t| / |t| <= tolerance; t == 0 requires p == 0.
bool relaxed_correct(double prediction, double truth, const MetricConfig& config = {});
/// Unparsable input counts as incorrect.
bool relaxed_correct(std::string_view prediction, std::string_view truth, const MetricConfig& config = {});

}  // namespace chartlab::evalkit

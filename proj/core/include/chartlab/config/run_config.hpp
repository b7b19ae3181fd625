#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "chartlab/analysis/analysis.hpp"
#include "chartlab/chartgen/chart_spec.hpp"
#include "chartlab/dualenc/encoder.hpp"
#include "chartlab/evalkit/evalkit.hpp"
#include "chartlab/negcap/negcap.hpp"
#include "chartlab/trainer/trainer.hpp"

namespace chartlab::config {

struct EvaluationSection {
  int k = 3;
  std::uint64_t seed = 1;
  evalkit::MetricConfig metric;
};

struct AnalysisSection {
  analysis::ProbeConfig probe;  ///< kind is set per fit
  std::vector<analysis::ProbeTask> tasks{analysis::kAllProbeTasks.begin(), analysis::kAllProbeTasks.end()};
  std::vector<int> crla_steps{25, 50, 100, 300};
  bool scaling = true;
  std::vector<double> fractions{0.25, 0.5, 1.0};
  std::vector<std::uint64_t> scaling_seeds{1};
  std::uint64_t subset_seed = 1;
};

/// Everything a run needs. encoder.image_resolution always equals
/// generator.resolution; training.k_train is the hard-negative variant's K
/// (the plain variant uses 0).
struct RunConfig {
  std::uint64_t seed = 1;
  chartgen::GeneratorConfig generator;
  negcap::NegativeConfig negatives;
  dualenc::EncoderConfig encoder;
  std::uint64_t init_seed = 1;
  trainer::TrainConfig training;
  EvaluationSection evaluation;
  AnalysisSection analysis;
};

bool operator==(const RunConfig& a, const RunConfig& b);

/// Names accepted by preset() and the "preset" key.
std::vector<std::string> preset_names();
/// Throws ConfigError("preset") for an unknown name.
RunConfig preset(std::string_view name);

/// Strict parse: unknown keys, type mismatches and constraint violations
/// raise ConfigError naming the dotted key and, when known, its line.
/// An optional top-level "preset" selects the base; "seed" fills every
/// section seed that is not given explicitly.
RunConfig parse_config(std::string_view text);
/// Throws IoError if the file cannot be read.
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved JSON; parse_config(to_json(c)) == c.
std::string to_json(const RunConfig& config);
/// SHA-256 of to_json.
std::string config_digest(const RunConfig& config);

/// Throws ConfigError naming the first invalid field.
void validate(const RunConfig& config);

}  // namespace chartlab::config

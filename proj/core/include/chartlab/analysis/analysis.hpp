#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chartlab/chartgen/dataset.hpp"
#include "chartlab/dualenc/encoder.hpp"
#include "chartlab/evalkit/evalkit.hpp"
#include "chartlab/trainer/trainer.hpp"

namespace chartlab::analysis {

using num::ParamSet;
using num::Tensor;

/// Chart-level classification targets read off the spec. All of them are
/// visible in the rendered image.
enum class ProbeTask {
  count,         ///< number of categories
  parity,        ///< number of categories mod 2
  chart_type,
  series_count,
  value_lookup,  ///< first value of the first series, in 4 equal bins of the y-range
  title,         ///< index in the title pool
  /// (title in the first half of the pool) xor (odd category count)
  title_count_xor,
};
inline constexpr std::array<ProbeTask, 7> kAllProbeTasks = {
    ProbeTask::count,        ProbeTask::parity, ProbeTask::chart_type,     ProbeTask::series_count,
    ProbeTask::value_lookup, ProbeTask::title,  ProbeTask::title_count_xor};
std::string_view to_string(ProbeTask t);
ProbeTask parse_probe_task(std::string_view s);

inline constexpr int kValueBins = 4;

/// Classes of `task` under `config`.
std::size_t class_count(ProbeTask task, const chartgen::GeneratorConfig& config);
/// Throws ContractError if the spec falls outside the task's class mapping.
std::size_t label_of(ProbeTask task, const chartgen::ChartSpec& spec, const chartgen::GeneratorConfig& config);

/// QA kinds whose answer depends on the image alone map to a probe task.
std::optional<ProbeTask> task_for(chartgen::QaKind kind);

struct TaskLabels {
  std::size_t classes = 0;
  std::vector<std::size_t> labels;  ///< one per embedding row
};

struct FrozenEmbeddings {
  Tensor embeddings;  ///< [n, projection_dim], unit rows
  std::vector<std::string> chart_ids;
  std::map<ProbeTask, TaskLabels> tasks;
  /// SHA-256 over the embedding bytes and labels.
  std::string digest() const;
};

/// Image embeddings of every chart with aligned labels for each task.
/// Reads `params` only.
FrozenEmbeddings extract_frozen_embeddings(const ParamSet& params, const dualenc::EncoderConfig& encoder,
                                           const chartgen::Dataset& data, const chartgen::GeneratorConfig& generator,
                                           const std::vector<ProbeTask>& tasks = {kAllProbeTasks.begin(),
                                                                                   kAllProbeTasks.end()});

enum class ProbeKind { linear, mlp };
enum class Activation { relu, tanh, identity };
std::string_view to_string(ProbeKind k);
std::string_view to_string(Activation a);
ProbeKind parse_probe_kind(std::string_view s);
Activation parse_activation(std::string_view s);

struct ProbeConfig {
  ProbeKind kind = ProbeKind::linear;
  std::vector<int> hidden{64};  ///< mlp only
  Activation activation = Activation::relu;
  int epochs = 300;  ///< full-batch Adam steps
  double learning_rate = 1e-2;
  /// L2 penalty on weight matrices (not biases), added to the gradient.
  double weight_decay = 1e-2;
  std::uint64_t seed = 1;
  double test_fraction = 0.2;
  /// Z-score features with statistics of the training rows.
  bool standardize = true;
  /// Reduction check: one identity hidden layer (width = input width) kept
  /// fixed during training. Requires kind = mlp and activation = identity.
  bool freeze_identity_hidden = false;
  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

void validate(const ProbeConfig& config);
std::string describe(const ProbeConfig& config);

struct ProbeModel {
  ProbeConfig config;
  std::size_t classes = 0;
  std::vector<double> mean, scale;  ///< feature standardization
  ParamSet params;
};

/// Called after each listed step (1-based) with the current model.
using ProbeSnapshotFn = std::function<void(int step, const ProbeModel& model)>;

/// Throws ContractError on shape mismatch, out-of-range labels or a single
/// observed class; ConfigError on an invalid config.
ProbeModel train_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes,
                       const ProbeConfig& config, const std::vector<int>& snapshot_steps = {},
                       const ProbeSnapshotFn& on_snapshot = {});
std::vector<std::size_t> predict(const ProbeModel& model, const Tensor& x);
double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
/// Seeded shuffle, then the last round(n * test_fraction) rows are the test set.
Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

struct ProbeReport {
  ProbeKind kind = ProbeKind::linear;
  std::string task;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t classes = 0;
  double chance = 0.0;  ///< 1 / classes
};

/// Seeded 80/20 split, fit, and score. `config.kind` decides the model.
ProbeReport fit_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes,
                      std::string_view task, const ProbeConfig& config);
ProbeReport fit_linear_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes,
                             std::string_view task, ProbeConfig config);
ProbeReport fit_mlp_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes,
                          std::string_view task, ProbeConfig config);

struct CrlaIrlaReport {
  std::size_t n = 0;
  double p = 0.0;  ///< fraction retrieved correctly
  std::optional<double> crla;
  std::optional<double> irla;
  double overall = 0.0;
};

/// Task accuracy conditioned on retrieval correctness. Throws ContractError
/// on a length mismatch or empty input.
CrlaIrlaReport crla_irla(const std::vector<bool>& retrieval_correct, const std::vector<bool>& task_correct);
/// |overall - (p CRLA + (1-p) IRLA)| <= tolerance, with a null side dropping out.
bool total_probability_holds(const CrlaIrlaReport& report, double tolerance = 1e-12);

struct CrlaIrlaPoint {
  int step = 0;  ///< probe training step
  CrlaIrlaReport report;
};

/// Trains one MLP probe per task on `train` and, at each snapshot step,
/// pairs its correctness on the eval chart with the retrieval outcome of
/// every eval instance whose QA kind maps to a task.
std::vector<CrlaIrlaPoint> crla_irla_curve(const FrozenEmbeddings& train, const FrozenEmbeddings& eval,
                                           const std::vector<evalkit::InstanceResult>& retrieval,
                                           const ProbeConfig& mlp, const std::vector<int>& steps);

struct ScalingConfig {
  std::vector<double> fractions{0.25, 0.5, 1.0};
  std::vector<std::uint64_t> seeds{1};
  int k_train = 3;
  int k_eval = 3;
  std::uint64_t eval_seed = 1;
  std::uint64_t subset_seed = 1;
  dualenc::EncoderConfig encoder;
  trainer::TrainConfig training;  ///< k_train and seed are set per cell
  int threads = 1;
};

struct ScalingPoint {
  std::string variant;  ///< "plain" or "hard-negative"
  double fraction = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::size_t charts = 0;
};

/// Chart indices in subset order; fraction f uses the first floor(f n).
std::vector<std::size_t> subset_order(std::size_t n, std::uint64_t seed);
chartgen::Dataset take_subset(const chartgen::Dataset& data, const std::vector<std::size_t>& order, double fraction);

/// Receives each finished cell with its trained parameters. Called from
/// worker threads when config.threads > 1.
using ScalingCellFn = std::function<void(const ScalingPoint& point, const ParamSet& params)>;

/// One training run per (variant, fraction, seed), sorted by that key.
/// Throws ConfigError for fractions outside (0, 1], unsorted fractions, or
/// a fraction with fewer charts than one batch.
std::vector<ScalingPoint> scaling_curves(const chartgen::Dataset& train, const chartgen::Dataset& eval,
                                         const ScalingConfig& config, const ScalingCellFn& on_cell = {});

struct AnalysisReport {
  std::vector<ScalingPoint> scaling;
  std::vector<CrlaIrlaPoint> crla_irla;
  std::vector<ProbeReport> probes;
  /// Provenance written into summary.json, e.g. config digests.
  std::map<std::string, std::string> provenance;
};

std::string scaling_csv(const std::vector<ScalingPoint>& points);
std::string crla_irla_csv(const std::vector<CrlaIrlaPoint>& points);
std::string probes_csv(const std::vector<ProbeReport>& probes);
std::string summary_json(const AnalysisReport& report);
/// Inverses of scaling_csv and crla_irla_csv; FormatError names the line.
std::vector<ScalingPoint> parse_scaling_csv(std::string_view text);
std::vector<CrlaIrlaPoint> parse_crla_irla_csv(std::string_view text);
/// Mean accuracy per variant against fraction.
std::string scaling_svg(const std::vector<ScalingPoint>& points);
/// CRLA, IRLA and overall against probe training step.
std::string crla_irla_svg(const std::vector<CrlaIrlaPoint>& points);

/// Writes the CSVs, summary.json and SVGs that have data; returns the paths
/// written. Throws IoError naming the path on failure.
std::vector<std::filesystem::path> emit_report(const AnalysisReport& report, const std::filesystem::path& dir);

}  // namespace chartlab::analysis

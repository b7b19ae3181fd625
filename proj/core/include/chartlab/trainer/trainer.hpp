#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chartlab/chartgen/dataset.hpp"
#include "chartlab/dualenc/encoder.hpp"
#include "chartlab/numerics/adam.hpp"
#include "chartlab/numerics/tape.hpp"

namespace chartlab::trainer {

using num::ParamSet;
using num::Tape;
using num::Tensor;
using num::Var;

/// 0.5 * (row-wise CE + column-wise CE) with the diagonal as targets.
Var symmetric_infonce(Tape& tape, Var logits);
double symmetric_infonce(const Tensor& logits);

/// Image->text over [positives | all hard negatives], text->image over
/// positives only, averaged. `negatives` may be invalid (K = 0), which
/// reduces exactly to symmetric_infonce.
Var hardneg_infonce(Tape& tape, Var images, Var positives, Var negatives, Var log_scale);
double hardneg_infonce(const Tensor& images, const Tensor& positives, const Tensor* negatives, double log_scale);

enum class Schedule { constant, cosine };
enum class CaptionSampling { one_per_image, all_captions };

std::string_view to_string(Schedule s);
std::string_view to_string(CaptionSampling s);
Schedule parse_schedule(std::string_view s);
CaptionSampling parse_caption_sampling(std::string_view s);

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 3e-4;
  int epochs = 3;
  int k_train = 0;
  std::uint64_t seed = 1;
  Schedule schedule = Schedule::cosine;
  int warmup_steps = 0;
  int checkpoint_every = 0;  ///< steps; 0 disables periodic checkpoints
  CaptionSampling sampling = CaptionSampling::one_per_image;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Spot finite-difference check of each update's gradients.
  bool verify_gradients = false;
  int verify_entries = 4;
  /// Cap on the training set (first N charts); 0 means all.
  std::size_t max_charts = 0;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);
std::string describe(const TrainConfig& config);

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct StepRecord {
  std::size_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> heldout_accuracy;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  /// step,epoch,loss,lr with 17 significant digits; deterministic.
  std::string to_csv() const;
  /// Per-epoch summary including wall-clock seconds.
  std::string summary_json() const;
};

struct TrainResult {
  ParamSet params;
  TrainLog log;
};

struct TrainHooks {
  /// Held-out retrieval accuracy evaluated after every epoch.
  std::function<double(const ParamSet&)> heldout;
  /// Directory for periodic (step-<n>.ckpt) and final (final.ckpt) checkpoints.
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Contrastive training from `init`. Throws ContractError for an empty
/// dataset or missing negatives, NumericalError naming the step on NaN.
TrainResult train(const chartgen::Dataset& data, const dualenc::EncoderConfig& encoder, const TrainConfig& config,
                  ParamSet init, const TrainHooks& hooks = {});

/// Which (chart, qa) pairs land in each batch of an epoch; exposed for tests.
struct Sample {
  std::size_t entry = 0;
  std::size_t qa = 0;
};
std::vector<std::vector<Sample>> epoch_batches(const chartgen::Dataset& data, const TrainConfig& config, int epoch,
                                               std::size_t chart_count);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParamSet& params, const dualenc::EncoderConfig& encoder,
                     const std::filesystem::path& path);
/// Throws DigestError if written under a different encoder config and
/// FormatError if the file is truncated or malformed.
ParamSet load_checkpoint(const std::filesystem::path& path, const dualenc::EncoderConfig& encoder);
std::string checkpoint_bytes(const ParamSet& params, const dualenc::EncoderConfig& encoder);
ParamSet parse_checkpoint(std::string_view bytes, const dualenc::EncoderConfig& encoder);

}  // namespace chartlab::trainer

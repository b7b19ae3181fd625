#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chartlab/chartgen/chart_spec.hpp"
#include "chartlab/chartgen/raster.hpp"

namespace chartlab::chartgen {

enum class Split { train, eval };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

enum class Polarity { positive, hard_negative };
/// How a caption was derived from its QA pair; `none` for positives.
enum class Strategy { flip, numeric, label, title, word_order, none };

std::string_view to_string(Polarity p);
std::string_view to_string(Strategy s);
Polarity parse_polarity(std::string_view s);
Strategy parse_strategy(std::string_view s);

struct CaptionRecord {
  std::string caption_id;
  std::string chart_id;
  std::string source_qa_id;
  std::string text;
  Polarity polarity = Polarity::positive;
  Strategy strategy = Strategy::none;
  /// Relative error of the embedded number for numeric negatives.
  std::optional<double> magnitude;
  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

struct ChartEntry {
  ChartSpec spec;
  RasterImage image;
  std::string image_path;  ///< relative to the dataset directory
  std::vector<QARecord> qas;
  std::vector<CaptionRecord> captions;

  const CaptionRecord* positive_for(std::string_view qa_id) const;
  std::vector<const CaptionRecord*> negatives_for(std::string_view qa_id) const;
};

/// One split of generated charts with their records. On disk this is a
/// directory holding manifest.json, specs.jsonl, qa.jsonl, captions.jsonl
/// and images/*.png.
struct Dataset {
  Split split = Split::train;
  std::string generator_config_digest;
  std::vector<ChartEntry> entries;

  std::size_t qa_count() const;
};

/// Seed of the i-th chart of a split. Train and eval draw from disjoint ranges.
std::uint64_t chart_seed(const GeneratorConfig& config, Split split, std::size_t index);

std::string generator_config_digest(const GeneratorConfig& config);

/// Samples, renders and captions every chart of `split` in memory.
Dataset generate_dataset(const GeneratorConfig& config, Split split, int threads = 1);

/// generate_dataset followed by write_dataset.
Dataset build_dataset(const GeneratorConfig& config, Split split, const std::filesystem::path& out_dir,
                      int threads = 1);

/// Writes all files and the manifest; returns the manifest content digest.
std::string write_dataset(const Dataset& dataset, const std::filesystem::path& dir, int threads = 1);

/// Reads a dataset directory, checking every referenced file exists.
Dataset load_dataset(const std::filesystem::path& dir);

/// SHA-256 over records and encoded images; equal digests mean equal files.
std::string content_digest(const Dataset& dataset);

std::string to_json_line(const ChartSpec& spec);
std::string to_json_line(const QARecord& qa);
std::string to_json_line(const CaptionRecord& caption);
ChartSpec chart_spec_from_json(std::string_view line);
QARecord qa_from_json(std::string_view line);
CaptionRecord caption_from_json(std::string_view line);

}  // namespace chartlab::chartgen

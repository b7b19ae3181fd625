#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chartlab/chartgen/raster.hpp"
#include "chartlab/numerics/tape.hpp"
#include "chartlab/numerics/tensor.hpp"

namespace chartlab::dualenc {

using num::ParamSet;
using num::Tensor;
using TokenIds = std::vector<std::size_t>;

inline const std::string kPad = "<pad>";
inline const std::string kUnk = "<unk>";

/// PAD, UNK, digits, '.', '?', ',', '%' and every caption word, in that order.
std::vector<std::string> default_vocabulary();

struct EncoderConfig {
  int image_resolution = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int projection_dim = 32;
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int text_max_length = 24;
  std::vector<std::string> vocabulary = default_vocabulary();
  double logit_scale_init = std::log(1.0 / 0.07);
  double logit_scale_max = std::log(100.0);

  int patches_per_side() const { return image_resolution / patch_size; }
  int patch_count() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Throws ConfigError naming the offending field.
void validate(const EncoderConfig& config);
std::string describe(const EncoderConfig& config);
std::string config_digest(const EncoderConfig& config);

class Tokenizer {
 public:
  explicit Tokenizer(const EncoderConfig& config);

  /// Lowercased, whitespace-split ids; numbers are spelled per character.
  /// Always exactly text_max_length ids (PAD-filled or truncated).
  TokenIds encode(std::string_view text) const;
  /// Same split without padding or truncation.
  std::vector<std::string> pieces(std::string_view text) const;

  std::size_t pad_id() const { return pad_; }
  std::size_t unk_id() const { return unk_; }
  std::size_t id_of(const std::string& token) const;
  std::size_t vocabulary_size() const { return vocab_.size(); }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t pad_ = 0;
  std::size_t unk_ = 0;
  std::size_t max_length_ = 0;
};

/// Scaled-normal weights, zero biases, unit LayerNorm gains and
/// logit_scale = logit_scale_init. Deterministic in seed.
ParamSet init_params(const EncoderConfig& config, std::uint64_t seed);

/// Throws ContractError if names or shapes disagree with the config.
void check_params(const ParamSet& params, const EncoderConfig& config);

/// Keeps the stored log-scale at or below logit_scale_max.
void clamp_logit_scale(ParamSet& params, const EncoderConfig& config);
double logit_scale(const ParamSet& params);

/// Pixels as [n * patch_count, patch_dim] in [-1, 1]; patches row-major.
Tensor patchify(std::span<const chartgen::RasterImage* const> images, const EncoderConfig& config);

/// Differentiable branches; both return unit rows of width projection_dim.
num::Var image_embeddings(num::Tape& tape, const ParamSet& params, const EncoderConfig& config,
                          std::span<const chartgen::RasterImage* const> images);
num::Var text_embeddings(num::Tape& tape, const ParamSet& params, const EncoderConfig& config,
                         std::span<const TokenIds> tokens);

Tensor encode_image(std::span<const chartgen::RasterImage* const> images, const ParamSet& params,
                    const EncoderConfig& config);
Tensor encode_image(const std::vector<chartgen::RasterImage>& images, const ParamSet& params,
                    const EncoderConfig& config);
Tensor encode_text(std::span<const TokenIds> tokens, const ParamSet& params, const EncoderConfig& config);
Tensor encode_text(const std::vector<std::string>& texts, const ParamSet& params, const EncoderConfig& config);

/// exp(logit_scale) * img * txt^T.
Tensor scaled_similarity(const Tensor& img, const Tensor& txt, const ParamSet& params);

}  // namespace chartlab::dualenc

#include "chartlab/dualenc/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>

#include "chartlab/chartgen/chart_spec.hpp"
#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"

namespace chartlab::dualenc {

using num::Tape;
using num::Var;

namespace {

constexpr std::size_t kEncodeChunk = 256;
const std::string kPunct = ".?,%";

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string block_name(const std::string& branch, int i, const std::string& leaf) {
  return branch + ".blk" + std::to_string(i) + "." + leaf;
}

struct Shape {
  std::string name;
  std::size_t rows, cols;
};

std::vector<Shape> branch_shapes(const EncoderConfig& c, const std::string& branch) {
  const auto E = static_cast<std::size_t>(c.embed_dim);
  const auto H = static_cast<std::size_t>(c.embed_dim * c.mlp_ratio);
  std::vector<Shape> out;
  for (int i = 0; i < c.layers; ++i) {
    out.push_back({block_name(branch, i, "ln1.g"), 1, E});
    out.push_back({block_name(branch, i, "ln1.b"), 1, E});
    out.push_back({block_name(branch, i, "qkv.w"), E, 3 * E});
    out.push_back({block_name(branch, i, "qkv.b"), 1, 3 * E});
    out.push_back({block_name(branch, i, "attn_out.w"), E, E});
    out.push_back({block_name(branch, i, "attn_out.b"), 1, E});
    out.push_back({block_name(branch, i, "ln2.g"), 1, E});
    out.push_back({block_name(branch, i, "ln2.b"), 1, E});
    out.push_back({block_name(branch, i, "mlp1.w"), E, H});
    out.push_back({block_name(branch, i, "mlp1.b"), 1, H});
    out.push_back({block_name(branch, i, "mlp2.w"), H, E});
    out.push_back({block_name(branch, i, "mlp2.b"), 1, E});
  }
  out.push_back({branch + ".lnf.g", 1, E});
  out.push_back({branch + ".lnf.b", 1, E});
  out.push_back({branch + ".proj.w", E, static_cast<std::size_t>(c.projection_dim)});
  return out;
}

std::vector<Shape> all_shapes(const EncoderConfig& c) {
  const auto E = static_cast<std::size_t>(c.embed_dim);
  std::vector<Shape> out{
      {"img.patch.w", static_cast<std::size_t>(c.patch_dim()), E},
      {"img.patch.b", 1, E},
      {"img.pos", static_cast<std::size_t>(c.patch_count()), E},
      {"txt.tok", c.vocabulary.size(), E},
      {"txt.pos", static_cast<std::size_t>(c.text_max_length), E},
      {"logit_scale", 1, 1},
  };
  for (const auto& branch : {"img", "txt"}) {
    auto b = branch_shapes(c, branch);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

Var linear(Tape& t, const ParamSet& p, Var x, const std::string& w, const std::string& b) {
  return t.add_row(t.matmul(x, t.param(p, w)), t.param(p, b));
}

Var transformer(Tape& t, const ParamSet& p, const EncoderConfig& c, const std::string& branch, Var x,
                std::size_t seq_len, std::span<const std::size_t> lengths) {
  for (int i = 0; i < c.layers; ++i) {
    auto n = [&](const char* leaf) { return block_name(branch, i, leaf); };
    Var h = t.layer_norm_rows(x, t.param(p, n("ln1.g")), t.param(p, n("ln1.b")));
    Var qkv = linear(t, p, h, n("qkv.w"), n("qkv.b"));
    Var att = t.self_attention(qkv, seq_len, static_cast<std::size_t>(c.heads), lengths);
    x = t.add(x, linear(t, p, att, n("attn_out.w"), n("attn_out.b")));
    h = t.layer_norm_rows(x, t.param(p, n("ln2.g")), t.param(p, n("ln2.b")));
    h = t.gelu(linear(t, p, h, n("mlp1.w"), n("mlp1.b")));
    x = t.add(x, linear(t, p, h, n("mlp2.w"), n("mlp2.b")));
  }
  return t.layer_norm_rows(x, t.param(p, branch + ".lnf.g"), t.param(p, branch + ".lnf.b"));
}

Var head(Tape& t, const ParamSet& p, const std::string& branch, Var pooled) {
  return t.l2_normalize_rows(t.matmul(pooled, t.param(p, branch + ".proj.w")));
}

std::size_t sequence_length(const TokenIds& ids, std::size_t pad) {
  std::size_t len = ids.size();
  while (len > 0 && ids[len - 1] == pad) --len;
  return std::max<std::size_t>(len, 1);
}

}  // namespace

std::vector<std::string> default_vocabulary() {
  std::vector<std::string> v{kPad, kUnk};
  for (char d = '0'; d <= '9'; ++d) v.emplace_back(1, d);
  for (char p : kPunct) v.emplace_back(1, p);
  for (auto& w : chartgen::caption_vocabulary()) {
    if (std::find(v.begin(), v.end(), w) == v.end()) v.push_back(w);
  }
  return v;
}

void validate(const EncoderConfig& c) {
  if (c.image_resolution <= 0 || c.patch_size <= 0 || c.image_resolution % c.patch_size != 0) {
    throw ConfigError("patch_size", "image_resolution must be a positive multiple of patch_size");
  }
  if (c.embed_dim <= 0 || c.heads <= 0 || c.embed_dim % c.heads != 0) {
    throw ConfigError("heads", "embed_dim must be a positive multiple of heads");
  }
  if (c.projection_dim <= 0) throw ConfigError("projection_dim", "must be positive");
  if (c.layers < 0) throw ConfigError("layers", "must be non-negative");
  if (c.mlp_ratio <= 0) throw ConfigError("mlp_ratio", "must be positive");
  if (c.text_max_length <= 0) throw ConfigError("text_max_length", "must be positive");
  if (!(c.logit_scale_init <= c.logit_scale_max)) {
    throw ConfigError("logit_scale_init", "must not exceed logit_scale_max");
  }
  std::set<std::string> vocab(c.vocabulary.begin(), c.vocabulary.end());
  if (vocab.size() != c.vocabulary.size()) throw ConfigError("vocabulary", "tokens must be distinct");
  for (const auto& required : {kPad, kUnk}) {
    if (!vocab.count(required)) throw ConfigError("vocabulary", "missing " + required);
  }
  for (char ch : std::string("0123456789") + kPunct) {
    if (!vocab.count(std::string(1, ch))) throw ConfigError("vocabulary", std::string("missing token '") + ch + "'");
  }
}

std::string describe(const EncoderConfig& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "res=%d;patch=%d;embed=%d;proj=%d;layers=%d;heads=%d;mlp=%d;textlen=%d;ls_init=%.17g;ls_max=%.17g;vocab=",
                c.image_resolution, c.patch_size, c.embed_dim, c.projection_dim, c.layers, c.heads, c.mlp_ratio,
                c.text_max_length, c.logit_scale_init, c.logit_scale_max);
  std::string out = buf;
  for (const auto& t : c.vocabulary) out += t + " ";
  return out;
}

std::string config_digest(const EncoderConfig& c) { return sha256_hex(describe(c)); }

Tokenizer::Tokenizer(const EncoderConfig& config)
    : vocab_(config.vocabulary), max_length_(static_cast<std::size_t>(config.text_max_length)) {
  validate(config);
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], i);
  pad_ = index_.at(kPad);
  unk_ = index_.at(kUnk);
}

std::size_t Tokenizer::id_of(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

std::vector<std::string> Tokenizer::pieces(std::string_view text) const {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (std::any_of(word.begin(), word.end(), is_digit)) {
      for (char ch : word) out.emplace_back(1, ch);
    } else {
      std::size_t end = word.size();
      while (end > 0 && kPunct.find(word[end - 1]) != std::string::npos) --end;
      if (end > 0) out.push_back(word.substr(0, end));
      for (std::size_t i = end; i < word.size(); ++i) out.emplace_back(1, word[i]);
    }
    word.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  flush();
  return out;
}

TokenIds Tokenizer::encode(std::string_view text) const {
  TokenIds ids;
  for (const auto& piece : pieces(text)) {
    if (ids.size() == max_length_) break;
    ids.push_back(id_of(piece));
  }
  ids.resize(max_length_, pad_);
  return ids;
}

ParamSet init_params(const EncoderConfig& c, std::uint64_t seed) {
  validate(c);
  ParamSet p;
  Rng rng(mix_seed(seed, stable_hash("dualenc.init")));
  const double residual_scale = 1.0 / std::sqrt(2.0 * std::max(1, c.layers));
  for (const auto& s : all_shapes(c)) {
    Tensor t = Tensor::matrix(s.rows, s.cols);
    const auto& n = s.name;
    auto ends_with = [&](std::string_view suffix) { return n.ends_with(suffix); };
    if (n == "logit_scale") {
      t[0] = c.logit_scale_init;
    } else if (ends_with(".g")) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    } else if (ends_with(".b")) {
      // zero
    } else if (n == "img.pos" || n == "txt.pos" || n == "txt.tok") {
      for (auto& v : t.data()) v = 0.02 * rng.normal();
    } else {
      double sd = 1.0 / std::sqrt(static_cast<double>(s.rows));
      if (ends_with("attn_out.w") || ends_with("mlp2.w")) sd *= residual_scale;
      for (auto& v : t.data()) v = sd * rng.normal();
    }
    p.emplace(n, std::move(t));
  }
  return p;
}

void check_params(const ParamSet& params, const EncoderConfig& c) {
  const auto shapes = all_shapes(c);
  if (params.size() != shapes.size()) {
    throw ContractError("encoder params: expected " + std::to_string(shapes.size()) + " tensors, got " +
                        std::to_string(params.size()));
  }
  for (const auto& s : shapes) {
    const auto it = params.find(s.name);
    if (it == params.end()) throw ContractError("encoder params: missing " + s.name);
    if (it->second.shape() != std::vector<std::size_t>{s.rows, s.cols}) {
      throw ContractError("encoder params: " + s.name + " has shape " + num::shape_string(it->second.shape()));
    }
  }
}

void clamp_logit_scale(ParamSet& params, const EncoderConfig& c) {
  auto& s = params.at("logit_scale");
  s[0] = std::min(s[0], c.logit_scale_max);
}

double logit_scale(const ParamSet& params) { return params.at("logit_scale").item(); }

Tensor patchify(std::span<const chartgen::RasterImage* const> images, const EncoderConfig& c) {
  const auto T = static_cast<std::size_t>(c.patch_count());
  const auto P = static_cast<std::size_t>(c.patch_dim());
  const int side = c.patches_per_side();
  const int ps = c.patch_size;
  Tensor out = Tensor::matrix(images.size() * T, P);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = *images[n];
    if (img.width != c.image_resolution || img.height != c.image_resolution) {
      throw ContractError("encode_image: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          ", encoder expects " + std::to_string(c.image_resolution));
    }
    for (int py = 0; py < side; ++py) {
      for (int px = 0; px < side; ++px) {
        double* row = out.raw() + (n * T + static_cast<std::size_t>(py * side + px)) * P;
        std::size_t k = 0;
        for (int y = 0; y < ps; ++y) {
          const std::uint8_t* src = img.pixels.data() + ((py * ps + y) * img.width + px * ps) * 3;
          for (int x = 0; x < ps * 3; ++x) row[k++] = src[x] / 127.5 - 1.0;
        }
      }
    }
  }
  return out;
}

Var image_embeddings(Tape& t, const ParamSet& p, const EncoderConfig& c,
                     std::span<const chartgen::RasterImage* const> images) {
  if (images.empty()) throw ContractError("encode_image: empty batch");
  const auto T = static_cast<std::size_t>(c.patch_count());
  Var x = t.constant(patchify(images, c));
  x = linear(t, p, x, "img.patch.w", "img.patch.b");
  x = t.add_tiled(x, t.param(p, "img.pos"));
  x = transformer(t, p, c, "img", x, T, {});
  return head(t, p, "img", t.segment_mean(x, T));
}

Var text_embeddings(Tape& t, const ParamSet& p, const EncoderConfig& c, std::span<const TokenIds> tokens) {
  if (tokens.empty()) throw ContractError("encode_text: empty batch");
  const std::size_t pad = std::find(c.vocabulary.begin(), c.vocabulary.end(), kPad) - c.vocabulary.begin();
  const auto max_len = static_cast<std::size_t>(c.text_max_length);
  std::vector<std::size_t> lengths;
  std::size_t L = 1;
  for (const auto& ids : tokens) {
    if (ids.size() > max_len) throw ContractError("encode_text: sequence longer than text_max_length");
    for (auto id : ids) {
      if (id >= c.vocabulary.size()) throw ContractError("encode_text: token id out of range");
    }
    lengths.push_back(sequence_length(ids, pad));
    L = std::max(L, lengths.back());
  }
  std::vector<std::size_t> flat(tokens.size() * L, pad);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::copy_n(tokens[i].begin(), std::min(L, tokens[i].size()), flat.begin() + static_cast<std::ptrdiff_t>(i * L));
  }
  Var x = t.gather_rows(t.param(p, "txt.tok"), flat);
  // Only the first L positional rows are used by this batch.
  const Tensor& pos_full = p.at("txt.pos");
  Var pos = t.param(p, "txt.pos");
  if (L < pos_full.rows()) {
    std::vector<std::size_t> first(L);
    for (std::size_t i = 0; i < L; ++i) first[i] = i;
    pos = t.gather_rows(pos, first);
  }
  x = t.add_tiled(x, pos);
  x = transformer(t, p, c, "txt", x, L, lengths);
  return head(t, p, "txt", t.segment_mean(x, L, lengths));
}

Tensor encode_image(std::span<const chartgen::RasterImage* const> images, const ParamSet& params,
                    const EncoderConfig& c) {
  check_params(params, c);
  if (images.empty()) throw ContractError("encode_image: empty batch");
  Tensor out = Tensor::matrix(images.size(), static_cast<std::size_t>(c.projection_dim));
  for (std::size_t start = 0; start < images.size(); start += kEncodeChunk) {
    const auto n = std::min(kEncodeChunk, images.size() - start);
    Tape t;
    const Tensor& v = t.value(image_embeddings(t, params, c, images.subspan(start, n)));
    std::copy(v.data().begin(), v.data().end(), out.raw() + start * out.cols());
  }
  return out;
}

Tensor encode_image(const std::vector<chartgen::RasterImage>& images, const ParamSet& params,
                    const EncoderConfig& c) {
  std::vector<const chartgen::RasterImage*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  return encode_image(std::span<const chartgen::RasterImage* const>(ptrs), params, c);
}

Tensor encode_text(std::span<const TokenIds> tokens, const ParamSet& params, const EncoderConfig& c) {
  check_params(params, c);
  if (tokens.empty()) throw ContractError("encode_text: empty batch");
  Tensor out = Tensor::matrix(tokens.size(), static_cast<std::size_t>(c.projection_dim));
  for (std::size_t start = 0; start < tokens.size(); start += kEncodeChunk) {
    const auto n = std::min(kEncodeChunk, tokens.size() - start);
    Tape t;
    const Tensor& v = t.value(text_embeddings(t, params, c, tokens.subspan(start, n)));
    std::copy(v.data().begin(), v.data().end(), out.raw() + start * out.cols());
  }
  return out;
}

Tensor encode_text(const std::vector<std::string>& texts, const ParamSet& params, const EncoderConfig& c) {
  const Tokenizer tok(c);
  std::vector<TokenIds> ids;
  ids.reserve(texts.size());
  for (const auto& s : texts) ids.push_back(tok.encode(s));
  return encode_text(std::span<const TokenIds>(ids), params, c);
}

Tensor scaled_similarity(const Tensor& img, const Tensor& txt, const ParamSet& params) {
  if (img.cols() != txt.cols()) {
    throw ContractError("scaled_similarity: embedding widths " + std::to_string(img.cols()) + " and " +
                        std::to_string(txt.cols()) + " differ");
  }
  const double s = std::exp(logit_scale(params));
  Tensor out = Tensor::matrix(img.rows(), txt.rows());
  for (std::size_t i = 0; i < img.rows(); ++i) {
    const auto a = img.row(i);
    for (std::size_t j = 0; j < txt.rows(); ++j) {
      const auto b = txt.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
      out.at(i, j) = s * dot;
    }
  }
  return out;
}

}  // namespace chartlab::dualenc

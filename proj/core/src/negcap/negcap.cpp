#include "chartlab/negcap/negcap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "chartlab/util/digest.hpp"
#include "chartlab/util/parallel.hpp"

namespace chartlab::negcap {

using chartgen::QaKind;
using chartgen::QARecord;

namespace {

double canonical(double v, NumberFormat f) {
  if (f == NumberFormat::integer) return std::round(v) + 0.0;
  return round_one_decimal(v);
}

std::string print(double v, NumberFormat f) {
  if (f == NumberFormat::integer) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  return format_one_decimal(v);
}

bool in_band(double candidate, double truth, const NegativeConfig& c) {
  const double rel = std::abs(candidate - truth) / std::abs(truth);
  return rel >= c.numeric_min_rel && rel <= c.numeric_max_rel;
}

double parse_answer(const QARecord& qa) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(qa.answer, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != qa.answer.size() || !std::isfinite(v)) {
    throw ContractError("qa " + qa.qa_id + ": numeric answer '" + qa.answer + "' does not parse");
  }
  return v;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

SynthesisError::SynthesisError(std::string qa_id, int achievable, int requested)
    : Error("qa " + qa_id + ": only " + std::to_string(achievable) + " distinct hard negatives achievable, " +
            std::to_string(requested) + " requested"),
      qa_id_(std::move(qa_id)),
      achievable_(achievable),
      requested_(requested) {}

void validate(const NegativeConfig& c) {
  if (c.k < 1) throw ConfigError("k", "must be at least 1");
  if (!(c.numeric_min_rel > 0.0 && c.numeric_min_rel < c.numeric_max_rel)) {
    throw ConfigError("numeric_min_rel", "must satisfy 0 < numeric_min_rel < numeric_max_rel");
  }
  if (!(c.zero_fallback.first > 0.0 && c.zero_fallback.first <= c.zero_fallback.second)) {
    throw ConfigError("zero_fallback", "must be a range of positive offsets");
  }
  if (std::set<std::string>(c.title_pool.begin(), c.title_pool.end()).size() < 2) {
    throw ConfigError("title_pool", "needs at least 2 distinct titles");
  }
  for (const auto& [s, w] : c.strategy_weights) {
    if (s == Strategy::none) throw ConfigError("strategy_weights", "'none' is not a negative strategy");
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("strategy_weights", "weights must be finite and >= 0");
  }
}

bool enabled(const NegativeConfig& c, Strategy s) {
  const auto it = c.strategy_weights.find(s);
  return it == c.strategy_weights.end() || it->second > 0.0;
}

std::string flip_binary(std::string_view answer) {
  if (answer == "Yes") return "No";
  if (answer == "No") return "Yes";
  if (answer == "yes") return "no";
  if (answer == "no") return "yes";
  throw ContractError("flip_binary: '" + std::string(answer) + "' is not a binary answer");
}

double perturb_numeric(double value, const NegativeConfig& c, Rng& rng, NumberFormat format) {
  if (!std::isfinite(value)) throw ContractError("perturb_numeric: non-finite value");
  if (value == 0.0) {
    for (int attempt = 0; attempt < 256; ++attempt) {
      const double v = canonical(rng.uniform(c.zero_fallback.first, c.zero_fallback.second), format);
      if (v != 0.0) return v;
    }
    throw ContractError("perturb_numeric: zero fallback range rounds to 0");
  }
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double rel = rng.uniform(c.numeric_min_rel, c.numeric_max_rel);
    const double sign = rng.coin() ? 1.0 : -1.0;
    const double v = canonical(value * (1.0 + sign * rel), format);
    if (in_band(v, value, c)) return v;
  }
  // Rounding keeps rejecting (tiny magnitudes); pick among every printable value in the band.
  const double step = format == NumberFormat::integer ? 1.0 : 0.1;
  const double span = std::abs(value) * c.numeric_max_rel;
  const auto lo = static_cast<long long>(std::floor((value - span) / step)) - 1;
  const auto hi = static_cast<long long>(std::ceil((value + span) / step)) + 1;
  std::vector<double> candidates;
  for (long long i = lo; i <= hi; ++i) {
    const double v = canonical(static_cast<double>(i) * step, format);
    if (in_band(v, value, c)) candidates.push_back(v);
  }
  if (candidates.empty()) {
    throw ContractError("perturb_numeric: no printable value of " + print(value, format) + " lies in the band");
  }
  return candidates[rng.below(candidates.size())];
}

std::string substitute_categorical(std::string_view answer, const std::vector<std::string>& labels, Rng& rng) {
  std::vector<std::string> others;
  bool found = false;
  for (const auto& l : labels) {
    if (l == answer) {
      found = true;
    } else if (std::find(others.begin(), others.end(), l) == others.end()) {
      others.push_back(l);
    }
  }
  if (!found) throw ContractError("substitute_categorical: '" + std::string(answer) + "' is not a chart label");
  if (others.empty()) throw ContractError("substitute_categorical: chart has fewer than 2 labels");
  return others[rng.below(others.size())];
}

std::string perturb_title(std::string_view title, const NegativeConfig& c, Rng& rng) {
  std::vector<std::string> others;
  for (const auto& t : c.title_pool) {
    if (t != title && std::find(others.begin(), others.end(), t) == others.end()) others.push_back(t);
  }
  if (others.empty()) throw ContractError("perturb_title: pool has no title other than '" + std::string(title) + "'");
  return others[rng.below(others.size())];
}

std::string shuffle_words(std::string_view caption, Rng& rng) {
  auto words = split_words(caption);
  if (words.size() < 2) throw ContractError("shuffle_words: caption needs at least 2 words");
  const auto original = words;
  if (std::all_of(words.begin(), words.end(), [&](const std::string& w) { return w == words[0]; })) {
    throw ContractError("shuffle_words: every word is identical");
  }
  for (int attempt = 0; attempt < 32; ++attempt) {
    rng.shuffle(words);
    if (words != original) return join_words(words);
  }
  words = original;
  std::rotate(words.begin(), words.begin() + 1, words.end());
  return join_words(words);
}

Strategy strategy_for(QaKind kind) {
  switch (kind) {
    case QaKind::compare_binary: return Strategy::flip;
    case QaKind::value_lookup:
    case QaKind::count: return Strategy::numeric;
    case QaKind::min_series:
    case QaKind::max_series: return Strategy::label;
    case QaKind::title: return Strategy::title;
  }
  return Strategy::none;
}

std::vector<CaptionRecord> synthesize_negatives(const QARecord& qa, const chartgen::ChartSpec& spec,
                                                const NegativeConfig& c) {
  validate(c);
  Rng rng(mix_seed(stable_hash(qa.qa_id), c.seed));
  const std::string positive = chartgen::caption_from_qa(qa);
  std::set<std::string> seen{positive};
  std::vector<CaptionRecord> out;
  const auto k = static_cast<std::size_t>(c.k);

  auto emit = [&](const std::string& text, Strategy s, std::optional<double> magnitude) {
    if (out.size() >= k || !seen.insert(text).second) return;
    CaptionRecord r;
    r.caption_id = qa.qa_id + "-n" + std::to_string(out.size());
    r.chart_id = qa.chart_id;
    r.source_qa_id = qa.qa_id;
    r.text = text;
    r.polarity = chartgen::Polarity::hard_negative;
    r.strategy = s;
    r.magnitude = magnitude;
    out.push_back(std::move(r));
  };
  auto with_answer = [&](const std::string& answer) {
    QARecord altered = qa;
    altered.answer = answer;
    return chartgen::caption_from_qa(altered);
  };

  const Strategy primary = strategy_for(qa.kind);
  if (enabled(c, primary)) {
    switch (primary) {
      case Strategy::flip:
        emit(with_answer(flip_binary(qa.answer)), Strategy::flip, std::nullopt);
        break;
      case Strategy::numeric: {
        const double truth = parse_answer(qa);
        const auto format = qa.kind == QaKind::count ? NumberFormat::integer : NumberFormat::one_decimal;
        try {
          for (int attempt = 0; attempt < 32 * c.k && out.size() < k; ++attempt) {
            const double v = perturb_numeric(truth, c, rng, format);
            const std::optional<double> mag =
                truth == 0.0 ? std::nullopt : std::optional<double>(std::abs(v - truth) / std::abs(truth));
            emit(with_answer(print(v, format)), Strategy::numeric, mag);
          }
        } catch (const ContractError&) {
          // No printable value in the band; word-order filler covers it.
        }
        break;
      }
      case Strategy::label: {
        std::vector<std::string> others;
        for (const auto& s : spec.series) {
          if (s.name != qa.answer) others.push_back(s.name);
        }
        rng.shuffle(others);
        for (const auto& o : others) emit(with_answer(o), Strategy::label, std::nullopt);
        break;
      }
      case Strategy::title: {
        std::vector<std::string> others;
        for (const auto& t : c.title_pool) {
          if (t != qa.answer) others.push_back(t);
        }
        rng.shuffle(others);
        for (const auto& o : others) emit(with_answer(o), Strategy::title, std::nullopt);
        break;
      }
      default:
        break;
    }
  }
  if (out.size() < k && enabled(c, Strategy::word_order) && split_words(positive).size() >= 2) {
    for (int attempt = 0; attempt < 64 * c.k && out.size() < k; ++attempt) {
      emit(shuffle_words(positive, rng), Strategy::word_order, std::nullopt);
    }
  }
  if (out.size() < k) throw SynthesisError(qa.qa_id, static_cast<int>(out.size()), c.k);
  return out;
}

void add_negatives(chartgen::Dataset& dataset, const NegativeConfig& config, int threads) {
  validate(config);
  parallel_for(dataset.entries.size(), threads, [&](std::size_t i) {
    auto& e = dataset.entries[i];
    std::erase_if(e.captions, [](const CaptionRecord& r) { return r.polarity == chartgen::Polarity::hard_negative; });
    std::vector<CaptionRecord> negatives;
    for (const auto& qa : e.qas) {
      auto n = synthesize_negatives(qa, e.spec, config);
      negatives.insert(negatives.end(), std::make_move_iterator(n.begin()), std::make_move_iterator(n.end()));
    }
    e.captions.insert(e.captions.end(), std::make_move_iterator(negatives.begin()),
                      std::make_move_iterator(negatives.end()));
  });
}

std::string describe(const NegativeConfig& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "k=%d;min_rel=%.17g;max_rel=%.17g;zero=%.17g,%.17g;seed=%llu;titles=", c.k,
                c.numeric_min_rel, c.numeric_max_rel, c.zero_fallback.first, c.zero_fallback.second,
                static_cast<unsigned long long>(c.seed));
  std::string out = buf;
  for (const auto& t : c.title_pool) out += t + ",";
  out += ";weights=";
  for (const auto& [s, w] : c.strategy_weights) {
    std::snprintf(buf, sizeof buf, "%s:%.17g,", std::string(chartgen::to_string(s)).c_str(), w);
    out += buf;
  }
  return out;
}

}  // namespace chartlab::negcap

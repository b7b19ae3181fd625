#include "chartlab/evalkit/evalkit.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_map>

#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"

namespace chartlab::evalkit {

namespace {

using nlohmann::json;

bool parse_number(std::string_view s, double& out) {
  std::string t(s);
  while (!t.empty() && std::isspace(static_cast<unsigned char>(t.back()))) t.pop_back();
  std::size_t start = 0;
  while (start < t.size() && std::isspace(static_cast<unsigned char>(t[start]))) ++start;
  t = t.substr(start);
  if (t.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(t, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == t.size() && std::isfinite(out);
}

json tally_json(const Tally& t) { return {{"correct", t.correct}, {"n", t.n}, {"accuracy", t.accuracy()}}; }

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<RetrievalInstance> build_retrieval_instances(const chartgen::Dataset& data, int k, std::uint64_t seed) {
  if (k < 0) throw ContractError("build_retrieval_instances: K must be non-negative");
  std::vector<RetrievalInstance> out;
  for (std::size_t e = 0; e < data.entries.size(); ++e) {
    const auto& entry = data.entries[e];
    for (const auto& qa : entry.qas) {
      const auto* pos = entry.positive_for(qa.qa_id);
      if (!pos) throw ContractError("build_retrieval_instances: qa " + qa.qa_id + " has no positive caption");
      const auto negs = entry.negatives_for(qa.qa_id);
      if (negs.size() < static_cast<std::size_t>(k)) {
        throw ContractError("build_retrieval_instances: qa " + qa.qa_id + " has " + std::to_string(negs.size()) +
                            " hard negatives, " + std::to_string(k) + " required");
      }
      RetrievalInstance inst;
      inst.entry = e;
      inst.chart_id = entry.spec.chart_id;
      inst.qa_id = qa.qa_id;
      inst.image_path = entry.image_path;
      inst.kind = qa.kind;
      std::vector<std::pair<std::string, Strategy>> cands{{pos->text, Strategy::none}};
      for (int i = 0; i < k; ++i) cands.emplace_back(negs[static_cast<std::size_t>(i)]->text, negs[static_cast<std::size_t>(i)]->strategy);
      inst.strategy = k == 0 ? Strategy::none : Strategy::word_order;
      for (std::size_t i = 1; i < cands.size(); ++i) {
        if (cands[i].second != Strategy::word_order) {
          inst.strategy = cands[i].second;
          break;
        }
      }
      std::set<std::string> distinct;
      for (const auto& c : cands) distinct.insert(c.first);
      if (distinct.size() != cands.size()) {
        throw ContractError("build_retrieval_instances: qa " + qa.qa_id + " has duplicate candidates");
      }
      std::vector<std::size_t> order(cands.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng(mix_seed(stable_hash(qa.qa_id), seed));
      rng.shuffle(order);
      for (std::size_t i = 0; i < order.size(); ++i) {
        inst.candidates.push_back(cands[order[i]].first);
        inst.candidate_strategies.push_back(cands[order[i]].second);
        if (order[i] == 0) inst.positive_index = i;
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::size_t argmax_first(const std::vector<double>& scores) {
  if (scores.empty()) throw ContractError("argmax_first: no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

RetrievalReport score_instances(const std::vector<RetrievalInstance>& instances,
                                const std::vector<std::vector<double>>& sims, std::vector<InstanceResult>* results) {
  if (sims.size() != instances.size()) throw ContractError("score_instances: one score vector per instance required");
  RetrievalReport r;
  if (results) results->clear();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    if (sims[i].size() != inst.candidates.size()) {
      throw ContractError("score_instances: instance " + inst.qa_id + " has a mismatched score vector");
    }
    if (r.candidate_count == 0) r.candidate_count = inst.candidates.size();
    if (r.candidate_count != inst.candidates.size()) {
      throw ContractError("score_instances: instances mix candidate counts");
    }
    const std::size_t pred = argmax_first(sims[i]);
    const bool ok = pred == inst.positive_index;
    for (Tally* t : {&r.overall, &r.per_kind[std::string(chartgen::to_string(inst.kind))],
                     &r.per_strategy[std::string(chartgen::to_string(inst.strategy))]}) {
      ++t->n;
      t->correct += ok ? 1 : 0;
    }
    if (results) {
      results->push_back({i, inst.chart_id, inst.qa_id, inst.kind, inst.strategy, pred, inst.positive_index, ok,
                          sims[i]});
    }
  }
  r.random_baseline = r.candidate_count == 0 ? 0.0 : 1.0 / static_cast<double>(r.candidate_count);
  return r;
}

std::vector<std::vector<double>> retrieval_similarities(const num::ParamSet& params,
                                                        const dualenc::EncoderConfig& enc,
                                                        const chartgen::Dataset& data,
                                                        const std::vector<RetrievalInstance>& instances) {
  std::unordered_map<std::size_t, std::size_t> image_row;
  std::vector<const chartgen::RasterImage*> images;
  std::unordered_map<std::string, std::size_t> text_row;
  std::vector<std::string> texts;
  for (const auto& inst : instances) {
    if (inst.entry >= data.entries.size()) throw ContractError("retrieval: instance refers to a missing chart");
    if (image_row.emplace(inst.entry, images.size()).second) images.push_back(&data.entries[inst.entry].image);
    for (const auto& c : inst.candidates) {
      if (text_row.emplace(c, texts.size()).second) texts.push_back(c);
    }
  }
  std::vector<std::vector<double>> sims;
  if (instances.empty()) return sims;
  const num::Tensor img = dualenc::encode_image(std::span<const chartgen::RasterImage* const>(images), params, enc);
  const num::Tensor txt = dualenc::encode_text(texts, params, enc);
  sims.reserve(instances.size());
  for (const auto& inst : instances) {
    const auto a = img.row(image_row.at(inst.entry));
    std::vector<double> s;
    for (const auto& c : inst.candidates) {
      const auto b = txt.row(text_row.at(c));
      double dot = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
      s.push_back(dot);
    }
    sims.push_back(std::move(s));
  }
  return sims;
}

RetrievalReport evaluate_retrieval(const num::ParamSet& params, const dualenc::EncoderConfig& enc,
                                   const chartgen::Dataset& data, const std::vector<RetrievalInstance>& instances,
                                   std::vector<InstanceResult>* results) {
  return score_instances(instances, retrieval_similarities(params, enc, data, instances), results);
}

std::string report_json(const RetrievalReport& r, std::string_view variant) {
  json j;
  if (!variant.empty()) j["variant"] = variant;
  j["overall"] = tally_json(r.overall);
  j["candidate_count"] = r.candidate_count;
  j["random_baseline"] = r.random_baseline;
  json kinds = json::object();
  for (const auto& [k, t] : r.per_kind) kinds[k] = tally_json(t);
  j["per_kind"] = kinds;
  json strategies = json::object();
  for (const auto& [k, t] : r.per_strategy) strategies[k] = tally_json(t);
  j["per_strategy"] = strategies;
  return j.dump(2) + "\n";
}

std::string results_jsonl(const std::vector<InstanceResult>& results) {
  std::string out;
  for (const auto& r : results) {
    json j = {{"instance", r.instance},
              {"chart_id", r.chart_id},
              {"qa_id", r.qa_id},
              {"kind", chartgen::to_string(r.kind)},
              {"strategy", chartgen::to_string(r.strategy)},
              {"predicted", r.predicted},
              {"positive_index", r.positive_index},
              {"correct", r.correct},
              {"scores", r.scores}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string comparison_csv(const std::vector<std::pair<std::string, RetrievalReport>>& rows) {
  std::string out = "variant,n,candidates,random";
  for (auto k : chartgen::kAllQaKinds) out += "," + std::string(chartgen::to_string(k));
  out += ",overall\n";
  for (const auto& [variant, r] : rows) {
    out += variant + "," + std::to_string(r.overall.n) + "," + std::to_string(r.candidate_count) + "," +
           g17(r.random_baseline);
    for (auto k : chartgen::kAllQaKinds) {
      const auto it = r.per_kind.find(std::string(chartgen::to_string(k)));
      out += ",";
      if (it != r.per_kind.end()) out += g17(it->second.accuracy());
    }
    out += "," + g17(r.overall.accuracy()) + "\n";
  }
  return out;
}

std::string normalize_answer(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string t;
  for (char c : s.substr(b, e - b)) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  double v;
  if (parse_number(t, v)) return g17(v + 0.0);
  return t;
}

bool exact_match(std::string_view prediction, std::string_view truth) {
  return normalize_answer(prediction) == normalize_answer(truth);
}

bool relaxed_correct(double p, double t, const MetricConfig& c) {
  if (!std::isfinite(p) || !std::isfinite(t)) return false;
  if (t == 0.0) return p == 0.0;
  // Slack keeps the bound inclusive for decimal inputs such as 1.05 vs 1.
  return std::abs(p - t) / std::abs(t) <= c.relaxed_tolerance + 1e-12;
}

bool relaxed_correct(std::string_view prediction, std::string_view truth, const MetricConfig& c) {
  double p, t;
  if (!parse_number(prediction, p) || !parse_number(truth, t)) return false;
  return relaxed_correct(p, t, c);
}

}  // namespace chartlab::evalkit

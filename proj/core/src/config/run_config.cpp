#include "chartlab/config/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <climits>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"

namespace chartlab::config {
namespace {

using json = nlohmann::json;
using Path = std::vector<std::string>;

std::string dotted(const Path& path) {
  std::string s;
  for (const auto& p : path) s += (s.empty() ? "" : ".") + p;
  return s;
}

std::size_t line_at(std::string_view text, std::size_t offset) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + std::min(offset, text.size()), '\n'));
}

// Locates each path segment as a quoted key after the previous one. Good
// enough for error messages; 0 when the key is absent from the text.
std::size_t line_of(std::string_view text, const Path& path) {
  std::size_t pos = 0;
  for (const auto& seg : path) {
    const std::string quoted = "\"" + seg + "\"";
    std::size_t at = pos;
    while (true) {
      at = text.find(quoted, at);
      if (at == std::string_view::npos) return 0;
      std::size_t after = at + quoted.size();
      while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
      if (after < text.size() && text[after] == ':') break;
      at += quoted.size();
    }
    pos = at + quoted.size();
  }
  return line_at(text, pos);
}

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  [[noreturn]] void fail(const Path& path, const std::string& what) const {
    const auto line = line_of(text_, path);
    throw ConfigError(dotted(path), line ? what + " (line " + std::to_string(line) + ")" : what);
  }

  void object(const json& j, const Path& path, std::initializer_list<const char*> allowed) const {
    if (!j.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : j.items()) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        Path p = path;
        p.push_back(key);
        fail(p, "unknown key");
      }
    }
  }

  static const json* find(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }

  void read(const json& obj, const Path& path, const char* key, int& out) const {
    if (const json* v = find(obj, key)) {
      if (!v->is_number_integer()) fail(sub(path, key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) fail(sub(path, key), "integer out of range");
      out = static_cast<int>(x);
    }
  }

  void read(const json& obj, const Path& path, const char* key, std::uint64_t& out) const {
    if (const json* v = find(obj, key)) out = unsigned_of(*v, sub(path, key));
  }

  void read(const json& obj, const Path& path, const char* key, double& out) const {
    if (const json* v = find(obj, key)) out = number_of(*v, sub(path, key));
  }

  void read(const json& obj, const Path& path, const char* key, bool& out) const {
    if (const json* v = find(obj, key)) {
      if (!v->is_boolean()) fail(sub(path, key), "expected true or false");
      out = v->get<bool>();
    }
  }

  template <typename Parse>
  auto enum_of(const json& v, const Path& path, Parse parse) const {
    if (!v.is_string()) fail(path, "expected a string");
    try {
      return parse(v.get<std::string>());
    } catch (const ConfigError& e) {
      fail(path, strip_key(e));
    }
  }

  template <typename T, typename Parse>
  void read_enum(const json& obj, const Path& path, const char* key, T& out, Parse parse) const {
    if (const json* v = find(obj, key)) out = enum_of(*v, sub(path, key), parse);
  }

  template <typename T, typename Item>
  void read_list(const json& obj, const Path& path, const char* key, std::vector<T>& out, Item item) const {
    const json* v = find(obj, key);
    if (!v) return;
    const Path p = sub(path, key);
    if (!v->is_array()) fail(p, "expected an array");
    std::vector<T> items;
    for (const auto& e : *v) items.push_back(item(e, p));
    out = std::move(items);
  }

  void read(const json& obj, const Path& path, const char* key, chartgen::IntRange& out) const {
    const json* v = find(obj, key);
    if (!v) return;
    const Path p = sub(path, key);
    if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number_integer() || !(*v)[1].is_number_integer()) {
      fail(p, "expected [min, max] integers");
    }
    out = {(*v)[0].get<int>(), (*v)[1].get<int>()};
  }

  void read(const json& obj, const Path& path, const char* key, std::pair<double, double>& out) const {
    const json* v = find(obj, key);
    if (!v) return;
    const Path p = sub(path, key);
    if (!v->is_array() || v->size() != 2) fail(p, "expected [lo, hi] numbers");
    out = {number_of((*v)[0], p), number_of((*v)[1], p)};
  }

  double number_of(const json& v, const Path& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(path, "expected a finite number");
    return x;
  }

  std::uint64_t unsigned_of(const json& v, const Path& path) const {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) fail(path, "expected a non-negative integer");
    fail(path, "expected an integer");
  }

  int int_of(const json& v, const Path& path) const {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<int>();
  }

  static Path sub(const Path& path, const char* key) {
    Path p = path;
    p.push_back(key);
    return p;
  }

  static std::string strip_key(const ConfigError& e) {
    std::string what = e.what();
    const std::string prefix = e.key() + ": ";
    if (!e.key().empty() && what.rfind(prefix, 0) == 0) what.erase(0, prefix.size());
    return what;
  }

  // Runs a section validator and reports its key under `section`.
  template <typename Fn>
  void validated(const Path& section, Fn fn) const {
    try {
      fn();
    } catch (const ConfigError& e) {
      fail(e.key().empty() ? section : sub(section, e.key().c_str()), strip_key(e));
    }
  }

 private:
  std::string_view text_;
};

void read_generator(const Reader& r, const json& j, chartgen::GeneratorConfig& g) {
  const Path p{"generator"};
  r.object(j, p,
           {"n_train", "n_eval", "seed", "series_count", "category_count", "value_min", "value_max", "chart_types",
            "qa_kinds", "value_lookups_per_chart", "resolution"});
  r.read(j, p, "n_train", g.n_train);
  r.read(j, p, "n_eval", g.n_eval);
  r.read(j, p, "seed", g.seed);
  r.read(j, p, "series_count", g.series_count);
  r.read(j, p, "category_count", g.category_count);
  r.read(j, p, "value_min", g.value_min);
  r.read(j, p, "value_max", g.value_max);
  r.read_list(j, p, "chart_types", g.chart_types,
              [&](const json& v, const Path& q) { return r.enum_of(v, q, chartgen::parse_chart_type); });
  r.read_list(j, p, "qa_kinds", g.qa_kinds,
              [&](const json& v, const Path& q) { return r.enum_of(v, q, chartgen::parse_qa_kind); });
  r.read(j, p, "value_lookups_per_chart", g.value_lookups_per_chart);
  r.read(j, p, "resolution", g.resolution);
}

void read_negatives(const Reader& r, const json& j, negcap::NegativeConfig& n) {
  const Path p{"negatives"};
  r.object(j, p, {"k", "numeric_min_rel", "numeric_max_rel", "zero_fallback", "strategy_weights", "seed"});
  r.read(j, p, "k", n.k);
  r.read(j, p, "numeric_min_rel", n.numeric_min_rel);
  r.read(j, p, "numeric_max_rel", n.numeric_max_rel);
  r.read(j, p, "zero_fallback", n.zero_fallback);
  r.read(j, p, "seed", n.seed);
  if (const json* w = Reader::find(j, "strategy_weights")) {
    const Path q = Reader::sub(p, "strategy_weights");
    if (!w->is_object()) r.fail(q, "expected an object");
    std::map<chartgen::Strategy, double> weights;
    for (const auto& [key, value] : w->items()) {
      const Path k = Reader::sub(q, key.c_str());
      const auto s = r.enum_of(json(key), k, chartgen::parse_strategy);
      if (s == chartgen::Strategy::none) r.fail(k, "not a negative strategy");
      weights[s] = r.number_of(value, k);
    }
    n.strategy_weights = std::move(weights);
  }
}

void read_encoder(const Reader& r, const json& j, RunConfig& c) {
  const Path p{"encoder"};
  r.object(j, p,
           {"patch_size", "embed_dim", "projection_dim", "layers", "heads", "mlp_ratio", "text_max_length",
            "logit_scale_init", "logit_scale_max", "init_seed"});
  auto& e = c.encoder;
  r.read(j, p, "patch_size", e.patch_size);
  r.read(j, p, "embed_dim", e.embed_dim);
  r.read(j, p, "projection_dim", e.projection_dim);
  r.read(j, p, "layers", e.layers);
  r.read(j, p, "heads", e.heads);
  r.read(j, p, "mlp_ratio", e.mlp_ratio);
  r.read(j, p, "text_max_length", e.text_max_length);
  r.read(j, p, "logit_scale_init", e.logit_scale_init);
  r.read(j, p, "logit_scale_max", e.logit_scale_max);
  r.read(j, p, "init_seed", c.init_seed);
}

void read_training(const Reader& r, const json& j, trainer::TrainConfig& t) {
  const Path p{"training"};
  r.object(j, p,
           {"batch_size", "learning_rate", "epochs", "k_train", "seed", "schedule", "warmup_steps",
            "checkpoint_every", "sampling", "beta1", "beta2", "epsilon", "verify_gradients", "verify_entries",
            "max_charts"});
  r.read(j, p, "batch_size", t.batch_size);
  r.read(j, p, "learning_rate", t.learning_rate);
  r.read(j, p, "epochs", t.epochs);
  r.read(j, p, "k_train", t.k_train);
  r.read(j, p, "seed", t.seed);
  r.read_enum(j, p, "schedule", t.schedule, trainer::parse_schedule);
  r.read(j, p, "warmup_steps", t.warmup_steps);
  r.read(j, p, "checkpoint_every", t.checkpoint_every);
  r.read_enum(j, p, "sampling", t.sampling, trainer::parse_caption_sampling);
  r.read(j, p, "beta1", t.beta1);
  r.read(j, p, "beta2", t.beta2);
  r.read(j, p, "epsilon", t.epsilon);
  r.read(j, p, "verify_gradients", t.verify_gradients);
  r.read(j, p, "verify_entries", t.verify_entries);
  if (const json* v = Reader::find(j, "max_charts")) t.max_charts = r.unsigned_of(*v, Reader::sub(p, "max_charts"));
}

void read_evaluation(const Reader& r, const json& j, EvaluationSection& e) {
  const Path p{"evaluation"};
  r.object(j, p, {"k", "seed", "relaxed_tolerance"});
  r.read(j, p, "k", e.k);
  r.read(j, p, "seed", e.seed);
  r.read(j, p, "relaxed_tolerance", e.metric.relaxed_tolerance);
}

void read_analysis(const Reader& r, const json& j, AnalysisSection& a) {
  const Path p{"analysis"};
  r.object(j, p, {"probe", "tasks", "crla_steps", "scaling", "fractions", "scaling_seeds", "subset_seed"});
  if (const json* pj = Reader::find(j, "probe")) {
    const Path q = Reader::sub(p, "probe");
    r.object(*pj, q,
             {"hidden", "activation", "epochs", "learning_rate", "weight_decay", "seed", "test_fraction",
              "standardize"});
    auto& c = a.probe;
    r.read_list(*pj, q, "hidden", c.hidden, [&](const json& v, const Path& w) { return r.int_of(v, w); });
    r.read_enum(*pj, q, "activation", c.activation, analysis::parse_activation);
    r.read(*pj, q, "epochs", c.epochs);
    r.read(*pj, q, "learning_rate", c.learning_rate);
    r.read(*pj, q, "weight_decay", c.weight_decay);
    r.read(*pj, q, "seed", c.seed);
    r.read(*pj, q, "test_fraction", c.test_fraction);
    r.read(*pj, q, "standardize", c.standardize);
  }
  r.read_list(j, p, "tasks", a.tasks,
              [&](const json& v, const Path& q) { return r.enum_of(v, q, analysis::parse_probe_task); });
  r.read_list(j, p, "crla_steps", a.crla_steps, [&](const json& v, const Path& q) { return r.int_of(v, q); });
  r.read(j, p, "scaling", a.scaling);
  r.read_list(j, p, "fractions", a.fractions, [&](const json& v, const Path& q) { return r.number_of(v, q); });
  r.read_list(j, p, "scaling_seeds", a.scaling_seeds,
              [&](const json& v, const Path& q) { return r.unsigned_of(v, q); });
  r.read(j, p, "subset_seed", a.subset_seed);
}

void check_analysis(const AnalysisSection& a) {
  analysis::ProbeConfig mlp = a.probe;
  mlp.kind = analysis::ProbeKind::mlp;
  analysis::validate(mlp);
  if (a.tasks.empty()) throw ConfigError("tasks", "at least one probe task is required");
  if (std::set<analysis::ProbeTask>(a.tasks.begin(), a.tasks.end()).size() != a.tasks.size()) {
    throw ConfigError("tasks", "duplicate task");
  }
  if (a.crla_steps.empty()) throw ConfigError("crla_steps", "at least one step is required");
  for (std::size_t i = 0; i < a.crla_steps.size(); ++i) {
    if (a.crla_steps[i] < 1 || a.crla_steps[i] > a.probe.epochs || (i > 0 && a.crla_steps[i] <= a.crla_steps[i - 1])) {
      throw ConfigError("crla_steps", "must be ascending within [1, probe.epochs]");
    }
  }
  if (a.fractions.empty()) throw ConfigError("fractions", "at least one fraction is required");
  for (std::size_t i = 0; i < a.fractions.size(); ++i) {
    if (!(a.fractions[i] > 0.0 && a.fractions[i] <= 1.0) || (i > 0 && a.fractions[i] <= a.fractions[i - 1])) {
      throw ConfigError("fractions", "must be ascending within (0, 1]");
    }
  }
  if (a.scaling_seeds.empty()) throw ConfigError("scaling_seeds", "at least one seed is required");
}

json probe_json(const analysis::ProbeConfig& c) {
  return {{"hidden", c.hidden},
          {"activation", std::string(analysis::to_string(c.activation))},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"test_fraction", c.test_fraction},
          {"standardize", c.standardize}};
}

template <typename T>
json names(const std::vector<T>& items) {
  json out = json::array();
  for (const auto& i : items) out.push_back(std::string(to_string(i)));
  return out;
}

}  // namespace

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

std::vector<std::string> preset_names() { return {"default", "smoke", "full"}; }

RunConfig preset(std::string_view name) {
  RunConfig c;
  c.training.k_train = 3;
  c.training.learning_rate = 1e-3;
  if (name == "default") return c;
  if (name == "smoke" || name == "full") {
    c.encoder.embed_dim = 32;
    c.encoder.projection_dim = 32;
    c.encoder.layers = 1;
    c.encoder.heads = 2;
  }
  if (name == "smoke") {
    c.generator.n_train = 160;
    c.generator.n_eval = 40;
    c.training.epochs = 2;
    c.training.batch_size = 32;
    c.analysis.probe.epochs = 200;
    c.analysis.crla_steps = {25, 50, 100, 200};
    return c;
  }
  if (name == "full") {
    c.generator.n_train = 1600;
    c.generator.n_eval = 400;
    c.training.epochs = 20;
    c.analysis.scaling_seeds = {1, 2, 3};
    return c;
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("preset", "unknown preset '" + std::string(name) + "' (expected one of " + known + ")");
}

void validate(const RunConfig& c) {
  const Reader r("");
  r.validated({"generator"}, [&] { chartgen::validate(c.generator); });
  r.validated({"negatives"}, [&] { negcap::validate(c.negatives); });
  r.validated({"encoder"}, [&] { dualenc::validate(c.encoder); });
  r.validated({"training"}, [&] { trainer::validate(c.training); });
  if (c.training.k_train < 1) r.fail({"training", "k_train"}, "the hard-negative variant needs k_train >= 1");
  if (c.training.k_train > c.negatives.k) r.fail({"training", "k_train"}, "exceeds negatives.k");
  if (c.evaluation.k < 0 || c.evaluation.k > c.negatives.k) r.fail({"evaluation", "k"}, "must lie in [0, negatives.k]");
  if (!(c.evaluation.metric.relaxed_tolerance >= 0.0)) r.fail({"evaluation", "relaxed_tolerance"}, "must be non-negative");
  r.validated({"analysis"}, [&] { check_analysis(c.analysis); });
}

RunConfig parse_config(std::string_view text) {
  json j;
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    j = json::object();
  } else {
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("", "line " + std::to_string(line_at(text, e.byte)) + ": malformed JSON");
    }
  }
  const Reader r(text);
  r.object(j, {}, {"preset", "seed", "generator", "negatives", "encoder", "training", "evaluation", "analysis"});

  RunConfig c;
  if (const json* p = Reader::find(j, "preset")) {
    if (!p->is_string()) r.fail({"preset"}, "expected a string");
    try {
      c = preset(p->get<std::string>());
    } catch (const ConfigError& e) {
      r.fail({"preset"}, Reader::strip_key(e));
    }
  } else {
    c = preset("default");
  }
  r.read(j, {}, "seed", c.seed);
  c.generator.seed = c.negatives.seed = c.init_seed = c.training.seed = c.evaluation.seed = c.seed;
  c.analysis.probe.seed = c.analysis.subset_seed = c.seed;

  if (const json* s = Reader::find(j, "generator")) read_generator(r, *s, c.generator);
  if (const json* s = Reader::find(j, "negatives")) read_negatives(r, *s, c.negatives);
  if (const json* s = Reader::find(j, "encoder")) read_encoder(r, *s, c);
  if (const json* s = Reader::find(j, "training")) read_training(r, *s, c.training);
  if (const json* s = Reader::find(j, "evaluation")) read_evaluation(r, *s, c.evaluation);
  if (const json* s = Reader::find(j, "analysis")) read_analysis(r, *s, c.analysis);
  c.encoder.image_resolution = c.generator.resolution;

  // Constraint errors point at the offending line of this document.
  try {
    validate(c);
  } catch (const ConfigError& e) {
    Path path;
    std::string key = e.key();
    for (std::size_t dot; (dot = key.find('.')) != std::string::npos; key.erase(0, dot + 1)) {
      path.push_back(key.substr(0, dot));
    }
    path.push_back(key);
    std::string what = Reader::strip_key(e);
    if (what.find("(line ") != std::string::npos) throw;
    r.fail(path, what);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

std::string to_json(const RunConfig& c) {
  const auto& g = c.generator;
  const auto& n = c.negatives;
  const auto& e = c.encoder;
  const auto& t = c.training;
  json weights = json::object();
  for (const auto& [s, w] : n.strategy_weights) weights[std::string(chartgen::to_string(s))] = w;
  json j = {
      {"seed", c.seed},
      {"generator",
       {{"n_train", g.n_train},
        {"n_eval", g.n_eval},
        {"seed", g.seed},
        {"series_count", {g.series_count.min, g.series_count.max}},
        {"category_count", {g.category_count.min, g.category_count.max}},
        {"value_min", g.value_min},
        {"value_max", g.value_max},
        {"chart_types", names(g.chart_types)},
        {"qa_kinds", names(g.qa_kinds)},
        {"value_lookups_per_chart", g.value_lookups_per_chart},
        {"resolution", g.resolution}}},
      {"negatives",
       {{"k", n.k},
        {"numeric_min_rel", n.numeric_min_rel},
        {"numeric_max_rel", n.numeric_max_rel},
        {"zero_fallback", {n.zero_fallback.first, n.zero_fallback.second}},
        {"strategy_weights", weights},
        {"seed", n.seed}}},
      {"encoder",
       {{"patch_size", e.patch_size},
        {"embed_dim", e.embed_dim},
        {"projection_dim", e.projection_dim},
        {"layers", e.layers},
        {"heads", e.heads},
        {"mlp_ratio", e.mlp_ratio},
        {"text_max_length", e.text_max_length},
        {"logit_scale_init", e.logit_scale_init},
        {"logit_scale_max", e.logit_scale_max},
        {"init_seed", c.init_seed}}},
      {"training",
       {{"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"epochs", t.epochs},
        {"k_train", t.k_train},
        {"seed", t.seed},
        {"schedule", std::string(trainer::to_string(t.schedule))},
        {"warmup_steps", t.warmup_steps},
        {"checkpoint_every", t.checkpoint_every},
        {"sampling", std::string(trainer::to_string(t.sampling))},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"epsilon", t.epsilon},
        {"verify_gradients", t.verify_gradients},
        {"verify_entries", t.verify_entries},
        {"max_charts", t.max_charts}}},
      {"evaluation",
       {{"k", c.evaluation.k},
        {"seed", c.evaluation.seed},
        {"relaxed_tolerance", c.evaluation.metric.relaxed_tolerance}}},
      {"analysis",
       {{"probe", probe_json(c.analysis.probe)},
        {"tasks", names(c.analysis.tasks)},
        {"crla_steps", c.analysis.crla_steps},
        {"scaling", c.analysis.scaling},
        {"fractions", c.analysis.fractions},
        {"scaling_seeds", c.analysis.scaling_seeds},
        {"subset_seed", c.analysis.subset_seed}}},
  };
  return j.dump(2) + "\n";
}

std::string config_digest(const RunConfig& c) { return sha256_hex(to_json(c)); }

}  // namespace chartlab::config

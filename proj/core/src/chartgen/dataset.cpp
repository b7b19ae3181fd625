#include "chartlab/chartgen/dataset.hpp"

#include <json.hpp>

#include <set>
#include <sstream>

#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/parallel.hpp"
#include "chartlab/util/rng.hpp"

namespace chartlab::chartgen {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json spec_json(const ChartSpec& s) {
  json series = json::array();
  for (const auto& ser : s.series) {
    series.push_back({{"name", ser.name},
                      {"color_index", ser.color_index},
                      {"line_style", to_string(ser.line_style)},
                      {"values", ser.values}});
  }
  return {{"chart_id", s.chart_id},   {"chart_type", to_string(s.chart_type)},
          {"title", s.title},         {"x_label", s.x_label},
          {"y_label", s.y_label},     {"categories", s.categories},
          {"series", series},         {"y_range", {s.y_min, s.y_max}},
          {"style_seed", s.style_seed}};
}

ChartSpec spec_from(const json& j) {
  ChartSpec s;
  s.chart_id = j.at("chart_id").get<std::string>();
  s.chart_type = parse_chart_type(j.at("chart_type").get<std::string>());
  s.title = j.at("title").get<std::string>();
  s.x_label = j.at("x_label").get<std::string>();
  s.y_label = j.at("y_label").get<std::string>();
  s.categories = j.at("categories").get<std::vector<std::string>>();
  for (const auto& js : j.at("series")) {
    Series ser;
    ser.name = js.at("name").get<std::string>();
    ser.color_index = js.at("color_index").get<int>();
    ser.line_style = parse_line_style(js.at("line_style").get<std::string>());
    ser.values = js.at("values").get<std::vector<double>>();
    s.series.push_back(std::move(ser));
  }
  s.y_min = j.at("y_range").at(0).get<double>();
  s.y_max = j.at("y_range").at(1).get<double>();
  s.style_seed = j.at("style_seed").get<std::uint64_t>();
  return s;
}

json qa_json(const QARecord& q) {
  json j = {{"qa_id", q.qa_id},       {"chart_id", q.chart_id}, {"kind", to_string(q.kind)},
            {"question", q.question}, {"answer", q.answer},     {"answer_is_numeric", q.answer_is_numeric}};
  if (!q.series.empty()) j["series"] = q.series;
  if (!q.category.empty()) j["category"] = q.category;
  if (!q.series2.empty()) j["series2"] = q.series2;
  if (!q.category2.empty()) j["category2"] = q.category2;
  return j;
}

QARecord qa_from(const json& j) {
  QARecord q;
  q.qa_id = j.at("qa_id").get<std::string>();
  q.chart_id = j.at("chart_id").get<std::string>();
  q.kind = parse_qa_kind(j.at("kind").get<std::string>());
  q.question = j.at("question").get<std::string>();
  q.answer = j.at("answer").get<std::string>();
  q.answer_is_numeric = j.at("answer_is_numeric").get<bool>();
  q.series = j.value("series", "");
  q.category = j.value("category", "");
  q.series2 = j.value("series2", "");
  q.category2 = j.value("category2", "");
  return q;
}

json caption_json(const CaptionRecord& c) {
  json j = {{"caption_id", c.caption_id}, {"chart_id", c.chart_id},
            {"source_qa_id", c.source_qa_id}, {"text", c.text},
            {"polarity", to_string(c.polarity)}, {"strategy", to_string(c.strategy)}};
  j["magnitude"] = c.magnitude ? json(*c.magnitude) : json(nullptr);
  return j;
}

CaptionRecord caption_from(const json& j) {
  CaptionRecord c;
  c.caption_id = j.at("caption_id").get<std::string>();
  c.chart_id = j.at("chart_id").get<std::string>();
  c.source_qa_id = j.at("source_qa_id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.polarity = parse_polarity(j.at("polarity").get<std::string>());
  c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  if (j.contains("magnitude") && !j.at("magnitude").is_null()) c.magnitude = j.at("magnitude").get<double>();
  return c;
}

json parse_line(std::string_view line, std::string_view what) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

struct Serialized {
  std::string specs, qa, captions;
};

Serialized serialize(const Dataset& d) {
  Serialized out;
  for (const auto& e : d.entries) {
    out.specs += to_json_line(e.spec) + "\n";
    for (const auto& q : e.qas) out.qa += to_json_line(q) + "\n";
    for (const auto& c : e.captions) out.captions += to_json_line(c) + "\n";
  }
  return out;
}

std::string digest_of(const Serialized& s, const std::vector<std::vector<std::uint8_t>>& pngs) {
  std::string buf = s.specs;
  buf += '\x1f';
  buf += s.qa;
  buf += '\x1f';
  buf += s.captions;
  for (const auto& p : pngs) {
    buf += '\x1f';
    buf.append(reinterpret_cast<const char*>(p.data()), p.size());
  }
  return sha256_hex(buf);
}

}  // namespace

std::string_view to_string(Split s) { return s == Split::train ? "train" : "eval"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  throw ConfigError("split", "unknown split '" + std::string(s) + "'");
}

std::string_view to_string(Polarity p) { return p == Polarity::positive ? "positive" : "hard_negative"; }

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::flip: return "flip";
    case Strategy::numeric: return "numeric";
    case Strategy::label: return "label";
    case Strategy::title: return "title";
    case Strategy::word_order: return "word_order";
    case Strategy::none: return "none";
  }
  return "?";
}

Polarity parse_polarity(std::string_view s) {
  if (s == "positive") return Polarity::positive;
  if (s == "hard_negative") return Polarity::hard_negative;
  throw FormatError("unknown polarity '" + std::string(s) + "'");
}

Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::flip, Strategy::numeric, Strategy::label, Strategy::title, Strategy::word_order,
                 Strategy::none}) {
    if (to_string(v) == s) return v;
  }
  throw FormatError("unknown strategy '" + std::string(s) + "'");
}

const CaptionRecord* ChartEntry::positive_for(std::string_view qa_id) const {
  for (const auto& c : captions) {
    if (c.polarity == Polarity::positive && c.source_qa_id == qa_id) return &c;
  }
  return nullptr;
}

std::vector<const CaptionRecord*> ChartEntry::negatives_for(std::string_view qa_id) const {
  std::vector<const CaptionRecord*> out;
  for (const auto& c : captions) {
    if (c.polarity == Polarity::hard_negative && c.source_qa_id == qa_id) out.push_back(&c);
  }
  return out;
}

std::size_t Dataset::qa_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.qas.size();
  return n;
}

std::uint64_t chart_seed(const GeneratorConfig& config, Split split, std::size_t index) {
  const std::uint64_t base = config.seed << 42;
  const std::uint64_t offset = split == Split::train ? 0 : (std::uint64_t{1} << 41);
  return base + offset + index;
}

std::string generator_config_digest(const GeneratorConfig& config) { return sha256_hex(describe(config)); }

Dataset generate_dataset(const GeneratorConfig& config, Split split, int threads) {
  validate(config);
  Dataset d;
  d.split = split;
  d.generator_config_digest = generator_config_digest(config);
  const auto n = static_cast<std::size_t>(split == Split::train ? config.n_train : config.n_eval);
  d.entries.resize(n);
  const std::set<QaKind> kinds(config.qa_kinds.begin(), config.qa_kinds.end());
  parallel_for(n, threads, [&](std::size_t i) {
    const std::uint64_t seed = chart_seed(config, split, i);
    ChartEntry& e = d.entries[i];
    e.spec = sample_chart_spec(seed, config);
    e.image = render_chart(e.spec, config.resolution);
    e.image_path = "images/" + e.spec.chart_id + ".png";
    e.qas = generate_qa(e.spec, mix_seed(seed, 1), kinds, config.value_lookups_per_chart);
    for (const auto& qa : e.qas) {
      CaptionRecord c;
      c.caption_id = qa.qa_id + "-p";
      c.chart_id = qa.chart_id;
      c.source_qa_id = qa.qa_id;
      c.text = caption_from_qa(qa);
      c.polarity = Polarity::positive;
      c.strategy = Strategy::none;
      e.captions.push_back(std::move(c));
    }
  });
  return d;
}

Dataset build_dataset(const GeneratorConfig& config, Split split, const std::filesystem::path& out_dir,
                      int threads) {
  Dataset d = generate_dataset(config, split, threads);
  write_dataset(d, out_dir, threads);
  return d;
}

std::string content_digest(const Dataset& dataset) {
  std::vector<std::vector<std::uint8_t>> pngs(dataset.entries.size());
  for (std::size_t i = 0; i < pngs.size(); ++i) pngs[i] = encode_png(dataset.entries[i].image);
  return digest_of(serialize(dataset), pngs);
}

std::string write_dataset(const Dataset& d, const std::filesystem::path& dir, int threads) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError((dir / "images").string(), ec.message());

  std::vector<std::vector<std::uint8_t>> pngs(d.entries.size());
  parallel_for(d.entries.size(), threads, [&](std::size_t i) {
    pngs[i] = encode_png(d.entries[i].image);
    write_file(dir / d.entries[i].image_path,
               std::string_view(reinterpret_cast<const char*>(pngs[i].data()), pngs[i].size()));
  });
  const Serialized s = serialize(d);
  write_file(dir / "specs.jsonl", s.specs);
  write_file(dir / "qa.jsonl", s.qa);
  write_file(dir / "captions.jsonl", s.captions);

  const std::string digest = digest_of(s, pngs);
  json entries = json::array();
  for (std::size_t i = 0; i < d.entries.size(); ++i) {
    const auto& e = d.entries[i];
    json qa_ids = json::array();
    json cap_ids = json::array();
    for (const auto& q : e.qas) qa_ids.push_back(q.qa_id);
    for (const auto& c : e.captions) cap_ids.push_back(c.caption_id);
    entries.push_back({{"chart_id", e.spec.chart_id},
                       {"image", e.image_path},
                       {"spec", "specs.jsonl"},
                       {"spec_line", i},
                       {"qa_ids", qa_ids},
                       {"caption_ids", cap_ids}});
  }
  json manifest = {{"format", "chartlab-dataset"},
                   {"version", kFormatVersion},
                   {"split", to_string(d.split)},
                   {"generator_config_digest", d.generator_config_digest},
                   {"content_digest", digest},
                   {"files", {{"specs", "specs.jsonl"}, {"qa", "qa.jsonl"}, {"captions", "captions.jsonl"}}},
                   {"entries", entries}};
  write_file(dir / "manifest.json", manifest.dump(1) + "\n");
  return digest;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const json m = parse_line(read_file(manifest_path), manifest_path.string());
  if (m.value("format", "") != "chartlab-dataset" || m.value("version", 0) != kFormatVersion) {
    throw FormatError(manifest_path.string() + ": not a chartlab dataset manifest");
  }
  Dataset d;
  d.split = parse_split(m.at("split").get<std::string>());
  d.generator_config_digest = m.at("generator_config_digest").get<std::string>();

  const auto specs = split_lines(read_file(dir / "specs.jsonl"));
  std::map<std::string, std::vector<QARecord>> qas;
  for (const auto& line : split_lines(read_file(dir / "qa.jsonl"))) {
    QARecord q = qa_from_json(line);
    qas[q.chart_id].push_back(std::move(q));
  }
  std::map<std::string, std::vector<CaptionRecord>> caps;
  for (const auto& line : split_lines(read_file(dir / "captions.jsonl"))) {
    CaptionRecord c = caption_from_json(line);
    caps[c.chart_id].push_back(std::move(c));
  }
  for (const auto& je : m.at("entries")) {
    ChartEntry e;
    const auto line = je.at("spec_line").get<std::size_t>();
    if (line >= specs.size()) throw FormatError(manifest_path.string() + ": spec_line out of range");
    e.spec = chart_spec_from_json(specs[line]);
    if (e.spec.chart_id != je.at("chart_id").get<std::string>()) {
      throw FormatError(manifest_path.string() + ": chart id mismatch at spec line " + std::to_string(line));
    }
    e.image_path = je.at("image").get<std::string>();
    const auto img_path = dir / e.image_path;
    if (!std::filesystem::exists(img_path)) throw IoError(img_path.string(), "referenced image is missing");
    e.image = read_png(img_path);
    e.qas = std::move(qas[e.spec.chart_id]);
    e.captions = std::move(caps[e.spec.chart_id]);
    d.entries.push_back(std::move(e));
  }
  return d;
}

std::string to_json_line(const ChartSpec& spec) { return spec_json(spec).dump(); }
std::string to_json_line(const QARecord& qa) { return qa_json(qa).dump(); }
std::string to_json_line(const CaptionRecord& caption) { return caption_json(caption).dump(); }

ChartSpec chart_spec_from_json(std::string_view line) {
  try {
    return spec_from(parse_line(line, "chart spec"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("chart spec: ") + e.what());
  }
}

QARecord qa_from_json(std::string_view line) {
  try {
    return qa_from(parse_line(line, "qa record"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("qa record: ") + e.what());
  }
}

CaptionRecord caption_from_json(std::string_view line) {
  try {
    return caption_from(parse_line(line, "caption record"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("caption record: ") + e.what());
  }
}

}  // namespace chartlab::chartgen

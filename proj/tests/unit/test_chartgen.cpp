#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <string>

#include "chartlab/chartgen/chart_spec.hpp"
#include "chartlab/chartgen/dataset.hpp"
#include "chartlab/chartgen/raster.hpp"
#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"

namespace fs = std::filesystem;
using namespace chartlab;
using namespace chartlab::chartgen;

namespace {

ChartSpec bar_spec(std::vector<double> values) {
  ChartSpec s;
  s.chart_id = "manual";
  s.chart_type = ChartType::bar;
  s.title = "Exports";
  s.x_label = "Year";
  s.y_label = "Index";
  for (std::size_t i = 0; i < values.size(); ++i) s.categories.push_back(std::to_string(1990 + i));
  s.series.push_back({"Kenya", 3, LineStyle::solid, std::move(values)});
  return s;
}

struct Component {
  int x0, y0, x1, y1, pixels;
};

// Independent flood fill over pixels of colour `c` inside `clip`.
std::vector<Component> components(const RasterImage& img, Rgb c, const Rect& clip) {
  std::vector<int> seen(static_cast<std::size_t>(img.width * img.height), 0);
  std::vector<Component> out;
  for (int y = clip.y0; y <= clip.y1; ++y) {
    for (int x = clip.x0; x <= clip.x1; ++x) {
      if (seen[y * img.width + x] || !(img.get(x, y) == c)) continue;
      Component comp{x, y, x, y, 0};
      std::vector<std::pair<int, int>> stack{{x, y}};
      seen[y * img.width + x] = 1;
      while (!stack.empty()) {
        auto [px, py] = stack.back();
        stack.pop_back();
        ++comp.pixels;
        comp.x0 = std::min(comp.x0, px);
        comp.x1 = std::max(comp.x1, px);
        comp.y0 = std::min(comp.y0, py);
        comp.y1 = std::max(comp.y1, py);
        const int dx[] = {1, -1, 0, 0};
        const int dy[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = px + dx[k], ny = py + dy[k];
          if (nx < clip.x0 || nx > clip.x1 || ny < clip.y0 || ny > clip.y1) continue;
          if (seen[ny * img.width + nx] || !(img.get(nx, ny) == c)) continue;
          seen[ny * img.width + nx] = 1;
          stack.push_back({nx, ny});
        }
      }
      out.push_back(comp);
    }
  }
  return out;
}

std::string one_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// Recomputes a QA answer from the spec without going through the generator.
std::string oracle_answer(const ChartSpec& spec, const QARecord& qa) {
  auto value = [&](const std::string& series, const std::string& cat) {
    for (const auto& s : spec.series) {
      if (s.name != series) continue;
      for (std::size_t i = 0; i < spec.categories.size(); ++i) {
        if (spec.categories[i] == cat) return s.values[i];
      }
    }
    ADD_FAILURE() << "no value for " << series << "/" << cat;
    return 0.0;
  };
  auto extreme = [&](const std::string& cat, bool highest) {
    const Series* best = nullptr;
    std::size_t ci = 0;
    while (spec.categories[ci] != cat) ++ci;
    for (const auto& s : spec.series) {
      if (!best || (highest ? s.values[ci] > best->values[ci] : s.values[ci] < best->values[ci])) best = &s;
    }
    return best->name;
  };
  switch (qa.kind) {
    case QaKind::value_lookup: return one_decimal(value(qa.series, qa.category));
    case QaKind::count: return std::to_string(spec.categories.size());
    case QaKind::min_series: return extreme(qa.category, false);
    case QaKind::max_series: return extreme(qa.category, true);
    case QaKind::compare_binary:
      return value(qa.series, qa.category) > value(qa.series2, qa.category2) ? "Yes" : "No";
    case QaKind::title: return spec.title;
  }
  return "";
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("chartlab_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(SampleChartSpec, SameSeedSameSpec) {
  GeneratorConfig cfg;
  for (std::uint64_t seed : {1ull, 7ull, 123456789ull}) {
    EXPECT_EQ(sample_chart_spec(seed, cfg), sample_chart_spec(seed, cfg));
  }
  EXPECT_NE(sample_chart_spec(1, cfg), sample_chart_spec(2, cfg));
}

TEST(SampleChartSpec, FixedShape) {
  GeneratorConfig cfg;
  cfg.series_count = {3, 3};
  cfg.category_count = {4, 4};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto spec = sample_chart_spec(seed, cfg);
    ASSERT_EQ(spec.series.size(), 3u);
    for (const auto& s : spec.series) EXPECT_EQ(s.values.size(), 4u);
  }
}

TEST(SampleChartSpec, PropertyInvariantsHold) {
  GeneratorConfig cfg;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto spec = sample_chart_spec(mix_seed(seed, 99), cfg);
    EXPECT_NO_THROW(validate(spec));
    std::set<std::string> names;
    std::set<int> colours;
    for (const auto& s : spec.series) {
      names.insert(s.name);
      colours.insert(s.color_index);
      for (double v : s.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 100.0);
        EXPECT_EQ(v, round_one_decimal(v));
      }
    }
    EXPECT_EQ(names.size(), spec.series.size());
    EXPECT_EQ(colours.size(), spec.series.size());
    EXPECT_GE(spec.categories.size(), 2u);
    EXPECT_LE(spec.categories.size(), 8u);
  }
}

TEST(SampleChartSpec, EmptyRangeIsConfigError) {
  GeneratorConfig cfg;
  cfg.series_count = {3, 2};
  EXPECT_THROW(sample_chart_spec(1, cfg), ConfigError);
  cfg = {};
  cfg.value_min = cfg.value_max = 5;
  EXPECT_THROW(sample_chart_spec(1, cfg), ConfigError);
  cfg = {};
  cfg.chart_types.clear();
  try {
    sample_chart_spec(1, cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "chart_types");
  }
}

TEST(Palette, ChannelDistance) {
  const auto& pal = palette();
  auto dist = [](Rgb a, Rgb b) {
    return std::max({std::abs(a.r - b.r), std::abs(a.g - b.g), std::abs(a.b - b.b)});
  };
  for (std::size_t i = 0; i < pal.size(); ++i) {
    EXPECT_GE(dist(pal[i], {0, 0, 0}), 60);
    EXPECT_GE(dist(pal[i], {255, 255, 255}), 60);
    for (std::size_t j = i + 1; j < pal.size(); ++j) EXPECT_GE(dist(pal[i], pal[j]), 60) << i << "," << j;
  }
}

TEST(Pools, SeriesInitialsDistinct) {
  std::set<char> initials;
  for (const auto& n : pools::series_names()) initials.insert(n[0]);
  EXPECT_EQ(initials.size(), pools::series_names().size());
}

TEST(RenderChart, ThreeBarsAreThreeRectangles) {
  const auto spec = bar_spec({30.0, 70.0, 50.0});
  for (int res : {64, 128, 224}) {
    const auto img = render_chart(spec, res);
    const auto layout = compute_layout(spec, res);
    const auto comps = components(img, palette()[3], layout.plot);
    ASSERT_EQ(comps.size(), 3u) << res;
    for (const auto& c : comps) {
      EXPECT_EQ(c.pixels, (c.x1 - c.x0 + 1) * (c.y1 - c.y0 + 1)) << "not a filled rectangle";
    }
    for (std::size_t i = 0; i + 1 < comps.size(); ++i) {
      for (std::size_t j = i + 1; j < comps.size(); ++j) {
        const bool overlap_x = comps[i].x0 <= comps[j].x1 && comps[j].x0 <= comps[i].x1;
        EXPECT_FALSE(overlap_x);
      }
    }
  }
}

TEST(RenderChart, ByteIdentical) {
  GeneratorConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto spec = sample_chart_spec(seed, cfg);
    EXPECT_EQ(render_chart(spec, 64), render_chart(spec, 64));
    EXPECT_EQ(encode_png(render_chart(spec, 128)), encode_png(render_chart(spec, 128)));
  }
}

TEST(RenderChart, LineStyleIsVisible) {
  auto spec = bar_spec({20.0, 80.0, 40.0, 60.0});
  spec.chart_type = ChartType::line;
  const auto solid = render_chart(spec, 64);
  spec.series[0].line_style = LineStyle::dotted;
  const auto dotted = render_chart(spec, 64);
  spec.series[0].line_style = LineStyle::dashed;
  const auto dashed = render_chart(spec, 64);
  EXPECT_NE(solid, dotted);
  EXPECT_NE(solid, dashed);
  EXPECT_NE(dotted, dashed);
}

TEST(RenderChart, DotlineDiffersFromLine) {
  auto spec = bar_spec({20.0, 80.0, 40.0});
  spec.chart_type = ChartType::line;
  const auto line = render_chart(spec, 64);
  spec.chart_type = ChartType::dotline;
  EXPECT_NE(line, render_chart(spec, 64));
}

TEST(RenderChart, BarHeightsAreValueFaithful) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = round_one_decimal(rng.uniform(5.0, 100.0));
    const double b = round_one_decimal(rng.uniform(5.0, 100.0));
    const auto spec = bar_spec({a, b});
    const int res = trial % 2 ? 128 : 64;
    const auto img = render_chart(spec, res);
    const auto layout = compute_layout(spec, res);
    auto comps = components(img, palette()[3], layout.plot);
    ASSERT_EQ(comps.size(), 2u);
    std::sort(comps.begin(), comps.end(), [](auto& l, auto& r) { return l.x0 < r.x0; });
    const double ha = comps[0].y1 - comps[0].y0 + 1;
    const double hb = comps[1].y1 - comps[1].y0 + 1;
    EXPECT_EQ(comps[0].y1, layout.plot.y1);
    // Heights are measured in pixels; expected is exact geometry.
    const double ea = a / 100.0 * layout.plot.height();
    const double eb = b / 100.0 * layout.plot.height();
    EXPECT_LE(std::abs(ha - ea), 0.5 + 1e-9);
    EXPECT_LE(std::abs(hb - eb), 0.5 + 1e-9);
    // Predicting the shorter bar from the taller one bounds quantization to one pixel.
    const double hi = std::max(ha, hb), lo = std::min(ha, hb);
    const double vhi = std::max(a, b), vlo = std::min(a, b);
    EXPECT_LE(std::abs(lo - hi * (vlo / vhi)), 1.0 + 1e-9) << a << " " << b;
  }
}

TEST(RenderChart, TooSmallIsError) {
  EXPECT_THROW(render_chart(bar_spec({1, 2}), 32), ContractError);
  auto spec = bar_spec({1, 2, 3, 4, 5, 6, 7, 8});
  for (const char* n : {"Chad", "Peru", "Japan"}) spec.series.push_back({n, int(spec.series.size()), {}, {1, 2, 3, 4, 5, 6, 7, 8}});
  spec.series[1].color_index = 5;
  spec.series[2].color_index = 6;
  spec.series[3].color_index = 7;
  for (int i = 0; i < 6; ++i) spec.categories.push_back("x");
  EXPECT_THROW(render_chart(spec, 64), ContractError);
}

TEST(RenderChart, PngRoundTrip) {
  const auto spec = sample_chart_spec(3, GeneratorConfig{});
  const auto img = render_chart(spec, 64);
  const auto dir = temp_dir("png");
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_png(dir / "a.png"), img);
  fs::remove_all(dir);
}

TEST(Font, GlyphsCoverLabels) {
  for (char c : std::string("0123456789.-%? ABCDEFGHIJKLMNOPQRSTUVWXYZ")) EXPECT_NE(font::glyph(c), nullptr) << c;
  EXPECT_EQ(font::text_width("ABC", 1), 17);
}

TEST(GenerateQa, ValueLookupReadsStoredValue) {
  auto spec = bar_spec({24.0, 24.0, 24.0});
  const auto qas = generate_qa(spec, 1, {QaKind::value_lookup});
  ASSERT_EQ(qas.size(), 1u);
  EXPECT_EQ(qas[0].answer, "24.0");
  EXPECT_TRUE(qas[0].answer_is_numeric);
}

TEST(GenerateQa, CountOnFiveBars) {
  const auto spec = bar_spec({1, 2, 3, 4, 5});
  const auto qas = generate_qa(spec, 1, {QaKind::count});
  ASSERT_EQ(qas.size(), 1u);
  EXPECT_EQ(qas[0].answer, "5");
}

TEST(GenerateQa, CompareTenVersusTwenty) {
  auto spec = bar_spec({10.0, 10.0});
  spec.series[0].name = "Chad";
  spec.series.push_back({"Peru", 5, LineStyle::solid, {20.0, 20.0}});
  bool saw_no = false, saw_yes = false;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto qas = generate_qa(spec, seed, {QaKind::compare_binary});
    ASSERT_EQ(qas.size(), 1u);
    if (qas[0].series == "Chad") {
      EXPECT_EQ(qas[0].answer, "No");
      EXPECT_EQ(qas[0].question.rfind("Is Chad greater than Peru", 0), 0u);
      saw_no = true;
    } else {
      EXPECT_EQ(qas[0].answer, "Yes");
      saw_yes = true;
    }
  }
  EXPECT_TRUE(saw_no);
  EXPECT_TRUE(saw_yes);
}

TEST(GenerateQa, SingleSeriesSkipsExtremes) {
  const auto spec = bar_spec({10, 20, 30});
  const auto qas = generate_qa(spec, 1, {QaKind::min_series, QaKind::max_series});
  EXPECT_TRUE(qas.empty());
  EXPECT_THROW(generate_qa(spec, 1, {}), ContractError);
}

TEST(GenerateQa, PropertyAnswersRecomputable) {
  GeneratorConfig cfg;
  const std::set<QaKind> all(kAllQaKinds.begin(), kAllQaKinds.end());
  std::set<QaKind> seen;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto spec = sample_chart_spec(seed, cfg);
    const auto qas = generate_qa(spec, mix_seed(seed, 1), all, 2);
    std::set<std::string> ids;
    for (const auto& qa : qas) {
      EXPECT_EQ(qa.chart_id, spec.chart_id);
      EXPECT_EQ(qa.answer, oracle_answer(spec, qa)) << qa.question;
      if (qa.kind == QaKind::compare_binary) EXPECT_TRUE(qa.answer == "Yes" || qa.answer == "No");
      ids.insert(qa.qa_id);
      seen.insert(qa.kind);
    }
    EXPECT_EQ(ids.size(), qas.size());
    // count, title and value_lookup are always supported.
    EXPECT_GE(qas.size(), 3u);
  }
  EXPECT_EQ(seen, all);
}

TEST(CaptionFromQa, Templates) {
  QARecord qa;
  qa.kind = QaKind::value_lookup;
  qa.series = "Malawi";
  qa.category = "1991";
  qa.answer = "76.3";
  qa.answer_is_numeric = true;
  qa.question = "What is the value of Malawi in 1991?";
  EXPECT_EQ(caption_from_qa(qa), "The value of Malawi in 1991 was 76.3.");

  QARecord cmp;
  cmp.kind = QaKind::compare_binary;
  cmp.series = "A";
  cmp.series2 = "B";
  cmp.question = "Is A greater than B?";
  cmp.answer = "Yes";
  EXPECT_EQ(caption_from_qa(cmp), "A is greater than B.");
  cmp.answer = "No";
  EXPECT_EQ(caption_from_qa(cmp), "A is not greater than B.");

  QARecord title;
  title.kind = QaKind::title;
  title.answer = "T";
  EXPECT_EQ(caption_from_qa(title), "The title of the chart is T.");

  QARecord count;
  count.kind = QaKind::count;
  count.answer = "5";
  EXPECT_EQ(caption_from_qa(count), "The chart shows 5 categories.");
}

TEST(CaptionFromQa, VocabularyIsClosed) {
  const auto vocab = caption_vocabulary();
  const std::set<std::string> words(vocab.begin(), vocab.end());
  GeneratorConfig cfg;
  const std::set<QaKind> all(kAllQaKinds.begin(), kAllQaKinds.end());
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto spec = sample_chart_spec(seed, cfg);
    for (const auto& qa : generate_qa(spec, seed, all)) {
      std::string w;
      for (char ch : caption_from_qa(qa) + " ") {
        if (ch == ' ' || ch == '.') {
          if (!w.empty() && !std::isdigit(static_cast<unsigned char>(w[0]))) {
            EXPECT_TRUE(words.count(w)) << "'" << w << "'";
          }
          w.clear();
        } else {
          w += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
      }
    }
  }
}

TEST(Dataset, BuildHundredCharts) {
  GeneratorConfig cfg;
  cfg.n_train = 100;
  cfg.n_eval = 20;
  const auto dir = temp_dir("ds100");
  const auto d = build_dataset(cfg, Split::train, dir);
  const auto manifest = read_file(dir / "manifest.json");
  ASSERT_EQ(d.entries.size(), 100u);
  for (const auto& e : d.entries) {
    EXPECT_TRUE(fs::exists(dir / e.image_path));
    EXPECT_NE(manifest.find(e.image_path), std::string::npos);
  }
  for (const char* f : {"specs.jsonl", "qa.jsonl", "captions.jsonl"}) EXPECT_TRUE(fs::exists(dir / f));

  const auto loaded = load_dataset(dir);
  ASSERT_EQ(loaded.entries.size(), d.entries.size());
  for (std::size_t i = 0; i < d.entries.size(); ++i) {
    EXPECT_EQ(loaded.entries[i].spec, d.entries[i].spec);
    EXPECT_EQ(loaded.entries[i].qas, d.entries[i].qas);
    EXPECT_EQ(loaded.entries[i].captions, d.entries[i].captions);
    EXPECT_EQ(loaded.entries[i].image, d.entries[i].image);
  }
  EXPECT_EQ(content_digest(loaded), content_digest(d));

  fs::remove(dir / d.entries[7].image_path);
  EXPECT_THROW(load_dataset(dir), IoError);
  fs::remove_all(dir);
}

TEST(Dataset, RebuildDigestStable) {
  GeneratorConfig cfg;
  cfg.n_train = 30;
  const auto a = temp_dir("dsa");
  const auto b = temp_dir("dsb");
  const auto da = write_dataset(generate_dataset(cfg, Split::train), a);
  const auto db = write_dataset(generate_dataset(cfg, Split::train, 3), b);
  EXPECT_EQ(da, db);
  EXPECT_EQ(read_file(a / "manifest.json"), read_file(b / "manifest.json"));
  EXPECT_EQ(read_file(a / "captions.jsonl"), read_file(b / "captions.jsonl"));
  cfg.seed = 2;
  EXPECT_NE(content_digest(generate_dataset(cfg, Split::train)), da);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, SplitsDisjoint) {
  GeneratorConfig cfg;
  cfg.n_train = 200;
  cfg.n_eval = 200;
  const auto train = generate_dataset(cfg, Split::train);
  const auto eval = generate_dataset(cfg, Split::eval);
  std::set<std::string> ids;
  for (const auto& e : train.entries) ids.insert(e.spec.chart_id);
  for (const auto& e : eval.entries) EXPECT_EQ(ids.count(e.spec.chart_id), 0u);
  EXPECT_EQ(ids.size(), 200u);
}

TEST(Dataset, JsonRoundTripProperty) {
  GeneratorConfig cfg;
  const std::set<QaKind> all(kAllQaKinds.begin(), kAllQaKinds.end());
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto spec = sample_chart_spec(rng.next_u64(), cfg);
    EXPECT_EQ(chart_spec_from_json(to_json_line(spec)), spec);
    for (const auto& qa : generate_qa(spec, rng.next_u64(), all)) {
      EXPECT_EQ(qa_from_json(to_json_line(qa)), qa);
      CaptionRecord c{qa.qa_id + "-n0", qa.chart_id, qa.qa_id, caption_from_qa(qa), Polarity::hard_negative,
                      Strategy::numeric, rng.coin() ? std::optional<double>(rng.uniform()) : std::nullopt};
      EXPECT_EQ(caption_from_json(to_json_line(c)), c);
    }
  }
  EXPECT_THROW(qa_from_json("{\"qa_id\": 1}"), FormatError);
  EXPECT_THROW(caption_from_json("not json"), FormatError);
}

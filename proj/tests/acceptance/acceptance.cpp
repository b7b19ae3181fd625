// Acceptance suite. Prints one PASS/FAIL line per criterion followed by a
// tally. Exit status is 0 once every criterion has been evaluated; pass
// --strict to exit 1 when any criterion fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "chartlab/analysis/analysis.hpp"
#include "chartlab/config/run_config.hpp"
#include "chartlab/evalkit/evalkit.hpp"
#include "chartlab/negcap/negcap.hpp"
#include "chartlab/numerics/gradcheck.hpp"
#include "chartlab/pipeline/pipeline.hpp"
#include "chartlab/trainer/trainer.hpp"
#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"
#include "cli.hpp"

using namespace chartlab;
namespace fs = std::filesystem;
using num::Tensor;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string pct(double v) { return fmt("%.1f", 100.0 * v); }

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Shared state for the training-based criteria (1, 3, 4, 5, 6).
struct Experiment {
  config::RunConfig cfg = config::preset("full");
  int threads = 1;
  chartgen::Dataset train, eval;
  std::vector<analysis::ScalingPoint> full_cells, partial_cells;
  std::optional<num::ParamSet> hard_negative_seed1;
  std::map<std::uint64_t, num::ParamSet> hard_negative_other_seeds;
  double full_cells_cpu_seconds = 0.0;
  std::vector<double> init_accuracy;
  bool trained = false;

  analysis::ScalingConfig scaling(const std::vector<double>& fractions) const {
    analysis::ScalingConfig sc;
    sc.fractions = fractions;
    sc.seeds = cfg.analysis.scaling_seeds;
    sc.k_train = cfg.training.k_train;
    sc.k_eval = cfg.evaluation.k;
    sc.eval_seed = cfg.evaluation.seed;
    sc.subset_seed = cfg.analysis.subset_seed;
    sc.encoder = cfg.encoder;
    sc.training = cfg.training;
    sc.threads = threads;
    return sc;
  }

  void load_data() {
    if (!train.entries.empty()) return;
    train = chartgen::generate_dataset(cfg.generator, chartgen::Split::train, threads);
    eval = chartgen::generate_dataset(cfg.generator, chartgen::Split::eval, threads);
    negcap::add_negatives(train, cfg.negatives, threads);
    negcap::add_negatives(eval, cfg.negatives, threads);
  }

  void run_full() {
    if (!full_cells.empty()) return;
    load_data();
    std::mutex mu;
    const double start = cpu_seconds();
    full_cells = analysis::scaling_curves(train, eval, scaling({1.0}),
                                          [&](const analysis::ScalingPoint& p, const num::ParamSet& params) {
                                            std::lock_guard<std::mutex> lock(mu);
                                            std::fprintf(stderr, "  trained %s seed %llu: accuracy %.4f\n",
                                                         p.variant.c_str(), static_cast<unsigned long long>(p.seed),
                                                         p.accuracy);
                                            if (p.variant != "hard-negative") return;
                                            if (p.seed == 1) {
                                              hard_negative_seed1 = params;
                                            } else {
                                              hard_negative_other_seeds[p.seed] = params;
                                            }
                                          });
    const auto instances = evalkit::build_retrieval_instances(eval, cfg.evaluation.k, cfg.evaluation.seed);
    for (auto seed : cfg.analysis.scaling_seeds) {
      init_accuracy.push_back(
          evalkit::evaluate_retrieval(dualenc::init_params(cfg.encoder, seed), cfg.encoder, eval, instances)
              .overall.accuracy());
    }
    full_cells_cpu_seconds = cpu_seconds() - start;
  }

  void run_partial() {
    if (!partial_cells.empty()) return;
    load_data();
    partial_cells = analysis::scaling_curves(train, eval, scaling({0.25, 0.5}));
  }

  double mean_accuracy(const std::vector<analysis::ScalingPoint>& cells, const std::string& variant,
                       double fraction) const {
    std::vector<double> v;
    for (const auto& p : cells) {
      if (p.variant == variant && p.fraction == fraction) v.push_back(p.accuracy);
    }
    return mean(v);
  }
};

Verdict criterion1(Experiment& x) {
  x.run_full();
  const double hn = x.mean_accuracy(x.full_cells, "hard-negative", 1.0);
  const double plain = x.mean_accuracy(x.full_cells, "plain", 1.0);
  const double init = mean(x.init_accuracy);
  const double minutes = x.full_cells_cpu_seconds / 60.0;
  const bool ok = hn - plain >= 0.05 && plain - init >= 0.10 && minutes <= 30.0;
  return {ok, "hard-negative " + pct(hn) + " vs plain " + pct(plain) + " vs init " + pct(init) + " over " +
                  std::to_string(x.cfg.analysis.scaling_seeds.size()) + " seeds (need +5.0, +10.0); " +
                  fmt("%.1f", minutes) + " CPU-min (limit 30)"};
}

Verdict criterion2(Experiment& x) {
  auto data = chartgen::generate_dataset(x.cfg.generator, chartgen::Split::eval, x.threads);
  auto neg = x.cfg.negatives;
  neg.k = 9;
  negcap::add_negatives(data, neg, x.threads);
  const auto& enc = x.cfg.encoder;
  bool ok = true;
  std::string detail;
  for (int k : {1, 3, 9}) {
    auto instances = evalkit::build_retrieval_instances(data, k, x.cfg.evaluation.seed);
    if (instances.size() < 1000) return {false, "only " + std::to_string(instances.size()) + " instances"};
    instances.resize(1000);
    // Expected accuracy of an untrained encoder: a fresh initialization per instance.
    std::size_t correct = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& in = instances[i];
      const auto params = dualenc::init_params(enc, mix_seed(stable_hash("acceptance.random"), i));
      const auto img = dualenc::encode_image(std::vector<chartgen::RasterImage>{data.entries[in.entry].image}, params, enc);
      const auto txt = dualenc::encode_text(in.candidates, params, enc);
      std::vector<double> sims(in.candidates.size(), 0.0);
      for (std::size_t j = 0; j < sims.size(); ++j)
        for (std::size_t c = 0; c < img.cols(); ++c) sims[j] += img.at(0, c) * txt.at(j, c);
      correct += evalkit::argmax_first(sims) == in.positive_index ? 1 : 0;
    }
    const double acc = static_cast<double>(correct) / 1000.0;
    const double chance = 1.0 / (k + 1);
    const double single =
        evalkit::evaluate_retrieval(dualenc::init_params(enc, 1), enc, data, instances).overall.accuracy();
    ok = ok && std::abs(acc - chance) <= 0.03;
    detail += (detail.empty() ? "" : "; ") + std::string("K=") + std::to_string(k) + " " + pct(acc) + " vs " +
              pct(chance) + " (one fixed init: " + pct(single) + ")";
  }
  return {ok, detail + "; tolerance 3.0"};
}

Verdict criterion3(Experiment& x) {
  x.run_full();
  x.run_partial();
  std::vector<analysis::ScalingPoint> cells = x.partial_cells;
  cells.insert(cells.end(), x.full_cells.begin(), x.full_cells.end());
  bool ok = true;
  std::string detail;
  for (double f : {0.25, 0.5, 1.0}) {
    const double hn = x.mean_accuracy(cells, "hard-negative", f), plain = x.mean_accuracy(cells, "plain", f);
    ok = ok && hn >= plain;
    detail += fmt("f=%.2f", f) + " hn " + pct(hn) + "/plain " + pct(plain) + "; ";
  }
  for (const std::string v : {"hard-negative", "plain"}) {
    const double gain = x.mean_accuracy(cells, v, 1.0) - x.mean_accuracy(cells, v, 0.25);
    ok = ok && gain >= 0.03;
    detail += v + " gain " + pct(gain) + " (need 3.0); ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Verdict criterion4(Experiment& x) {
  x.run_full();
  const auto& cfg = x.cfg;
  const auto& hn = *x.hard_negative_seed1;
  const std::vector<analysis::ProbeTask> tasks{analysis::ProbeTask::count, analysis::ProbeTask::title};
  const auto fe_train = analysis::extract_frozen_embeddings(hn, cfg.encoder, x.train, cfg.generator, tasks);
  const auto fe_eval = analysis::extract_frozen_embeddings(hn, cfg.encoder, x.eval, cfg.generator, tasks);
  std::vector<evalkit::InstanceResult> results;
  evalkit::evaluate_retrieval(hn, cfg.encoder, x.eval,
                              evalkit::build_retrieval_instances(x.eval, cfg.evaluation.k, cfg.evaluation.seed),
                              &results);
  auto mlp = cfg.analysis.probe;
  mlp.kind = analysis::ProbeKind::mlp;
  const auto curve = analysis::crla_irla_curve(fe_train, fe_eval, results, mlp, cfg.analysis.crla_steps);

  analysis::AnalysisReport report;
  report.crla_irla = curve;
  const auto dir = fs::temp_directory_path() / "chartlab-acceptance-crla";
  fs::remove_all(dir);
  analysis::emit_report(report, dir);
  const auto emitted = analysis::parse_crla_irla_csv(read_file(dir / "crla_irla.csv"));
  fs::remove_all(dir);

  bool identity = emitted.size() == curve.size();
  for (const auto& pt : curve) identity = identity && analysis::total_probability_holds(pt.report, 1e-12);
  for (const auto& pt : emitted) identity = identity && analysis::total_probability_holds(pt.report, 1e-12);
  const auto& last = curve.back().report;
  const bool ordered = last.crla && last.irla && *last.crla >= *last.irla;
  return {ordered && identity, "CRLA " + pct(last.crla.value_or(NAN)) + " vs IRLA " + pct(last.irla.value_or(NAN)) +
                                   " at probe step " + std::to_string(curve.back().step) + " (p=" + pct(last.p) +
                                   ", n=" + std::to_string(last.n) + "); identity " +
                                   (identity ? "holds" : "violated") + " on " +
                                   std::to_string(curve.size() + emitted.size()) + " reports"};
}

std::pair<analysis::ProbeReport, analysis::ProbeReport> probe_pair(const Experiment& x, const num::ParamSet& params,
                                                                   analysis::ProbeTask task) {
  const auto fe = analysis::extract_frozen_embeddings(params, x.cfg.encoder, x.train, x.cfg.generator, {task});
  const auto& l = fe.tasks.at(task);
  auto cfg = x.cfg.analysis.probe;
  return {analysis::fit_linear_probe(fe.embeddings, l.labels, l.classes, to_string(task), cfg),
          analysis::fit_mlp_probe(fe.embeddings, l.labels, l.classes, to_string(task), cfg)};
}

Verdict criterion5(Experiment& x) {
  x.run_full();
  const auto& hn = *x.hard_negative_seed1;
  const auto [lin, mlp] = probe_pair(x, hn, analysis::ProbeTask::title_count_xor);
  const bool ok = mlp.test_accuracy - lin.test_accuracy >= 0.10 && std::abs(lin.test_accuracy - lin.chance) <= 0.10;
  const auto [clin, cmlp] = probe_pair(x, hn, analysis::ProbeTask::count);
  // Other seeds are reported but do not enter the verdict.
  std::string others;
  for (const auto& [seed, params] : x.hard_negative_other_seeds) {
    const auto [l, m] = probe_pair(x, params, analysis::ProbeTask::title_count_xor);
    others += ", seed " + std::to_string(seed) + " " + pct(m.test_accuracy - l.test_accuracy);
  }
  return {ok, "title_count_xor: MLP " + pct(mlp.test_accuracy) + " vs linear " + pct(lin.test_accuracy) +
                  " (chance " + pct(lin.chance) + "; need gap >= 10.0, linear within 10.0 of chance); count: MLP " +
                  pct(cmlp.test_accuracy) + " vs linear " + pct(clin.test_accuracy) + " (chance " + pct(clin.chance) +
                  "); xor gap on other seeds:" + (others.empty() ? std::string(" n/a") : others.substr(1))};
}

Verdict criterion6(Experiment& x) {
  x.run_full();
  const auto random = probe_pair(x, dualenc::init_params(x.cfg.encoder, 1), analysis::ProbeTask::value_lookup).second;
  const auto trained = probe_pair(x, *x.hard_negative_seed1, analysis::ProbeTask::value_lookup).second;
  const bool ok = random.test_accuracy <= trained.test_accuracy - 0.15;
  return {ok, "value_lookup MLP probe: random init " + pct(random.test_accuracy) + " vs trained " +
                  pct(trained.test_accuracy) + " (chance " + pct(trained.chance) + "; need random <= trained - 15.0)"};
}

Verdict criterion7(Experiment& x) {
  x.load_data();
  const auto& enc = x.cfg.encoder;
  const dualenc::Tokenizer tok(enc);
  const int k = x.cfg.training.k_train;
  double worst = 0.0;
  std::string worst_param, worst_detail;
  std::size_t checked = 0;
  for (std::uint64_t b = 0; b < 5; ++b) {
    Rng rng(mix_seed(stable_hash("acceptance.fd"), b));
    std::vector<const chartgen::RasterImage*> images;
    std::vector<dualenc::TokenIds> pos, neg;
    while (images.size() < 4) {
      const auto& e = x.train.entries[rng.below(x.train.entries.size())];
      const auto& qa = e.qas[rng.below(e.qas.size())];
      images.push_back(&e.image);
      pos.push_back(tok.encode(e.positive_for(qa.qa_id)->text));
      const auto negs = e.negatives_for(qa.qa_id);
      for (int j = 0; j < k; ++j) neg.push_back(tok.encode(negs[static_cast<std::size_t>(j)]->text));
    }
    auto params = dualenc::init_params(enc, 100 + b);
    auto fn = [&](num::Tape& t, const num::ParamSet& p) {
      num::Var img = dualenc::image_embeddings(t, p, enc, images);
      num::Var txt = dualenc::text_embeddings(t, p, enc, pos);
      num::Var nv = dualenc::text_embeddings(t, p, enc, neg);
      return trainer::hardneg_infonce(t, img, txt, nv, t.param(p, "logit_scale"));
    };
    num::FdOptions opt;
    opt.max_entries_per_param = 24;
    opt.seed = b;
    opt.denominator_floor = 1e-6;  // key-bias gradients are exactly zero; differences there are rounding noise near 1e-11
    const auto r = num::finite_diff_report(fn, params, 1e-5, opt);
    checked += r.entries_checked;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      worst_param = r.worst_param;
      worst_detail = "[" + std::to_string(r.worst_index) + "] analytic " + fmt("%.3g", r.worst_analytic) +
                     " numeric " + fmt("%.3g", r.worst_numeric);
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.3g", worst) + " (" + worst_param + " " + worst_detail + ") over " +
                            std::to_string(checked) + " entries in 5 batches of 4; limit 1e-4"};
}

Verdict criterion8(Experiment& x) {
  bool ok = true;
  std::string detail;
  double worst_ln = 0.0;
  for (std::size_t n : {2u, 4u, 8u}) {
    worst_ln = std::max(worst_ln, std::abs(trainer::symmetric_infonce(Tensor::matrix(n, n, 0.37)) - std::log(double(n))));
  }
  ok = ok && worst_ln <= 1e-9;
  detail += "uniform |loss - ln n| max " + fmt("%.2g", worst_ln);

  bool bit_equal = true;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    Rng rng(s);
    const std::size_t n = 2 + rng.below(7), d = 3 + rng.below(6);
    Tensor img = Tensor::matrix(n, d), pos = Tensor::matrix(n, d);
    for (auto& v : img.data()) v = rng.normal();
    for (auto& v : pos.data()) v = rng.normal();
    img = num::l2_normalize_rows(img);
    pos = num::l2_normalize_rows(pos);
    const double ls = rng.uniform(0.0, 4.6);
    num::Tape t;
    const auto l = trainer::hardneg_infonce(t, t.constant(img), t.constant(pos), num::Var{},
                                            t.constant(Tensor::matrix(1, 1, ls)));
    num::Tape u;
    const auto m = trainer::symmetric_infonce(
        u, u.scale_by(u.matmul_nt(u.constant(img), u.constant(pos)), u.exp(u.constant(Tensor::matrix(1, 1, ls)))));
    bit_equal = bit_equal && t.value(l).item() == u.value(m).item();
  }
  ok = ok && bit_equal;
  detail += std::string("; K=0 ") + (bit_equal ? "bit-equal" : "differs") + " on 10 batches";

  x.load_data();
  const auto params = dualenc::init_params(x.cfg.encoder, 1);
  std::vector<chartgen::RasterImage> images;
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < 32; ++i) {
    images.push_back(x.eval.entries[i].image);
    texts.push_back(x.eval.entries[i].captions.front().text);
  }
  double worst_norm = 0.0;
  for (const auto& m : {dualenc::encode_image(images, params, x.cfg.encoder),
                        dualenc::encode_text(texts, params, x.cfg.encoder)}) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < m.cols(); ++c) s += m.at(r, c) * m.at(r, c);
      worst_norm = std::max(worst_norm, std::abs(std::sqrt(s) - 1.0));
    }
  }
  ok = ok && worst_norm <= 1e-6;
  detail += "; embedding |norm - 1| max " + fmt("%.2g", worst_norm);
  return {ok, detail};
}

// Tenths as exact integers, so the oracle needs no floating point.
std::string tenths(long v) {
  const long a = std::labs(v);
  return std::string(v < 0 ? "-" : "") + std::to_string(a / 10) + "." + std::to_string(a % 10);
}

std::string differing_number(const std::string& a, const std::string& b, std::string& other) {
  std::istringstream sa(a), sb(b);
  std::string ta, tb;
  while (sa >> ta && sb >> tb) {
    if (ta != tb) {
      if (!ta.empty() && ta.back() == '.') ta.pop_back();
      if (!tb.empty() && tb.back() == '.') tb.pop_back();
      other = tb;
      return ta;
    }
  }
  return {};
}

Verdict criterion9(Experiment& x) {
  // Relaxed accuracy against integer arithmetic: |p - t| <= 5% |t| <=> 20 |P - T| <= |T| in tenths.
  struct Case {
    long p, t;
  };
  std::vector<Case> cases{{245, 240}, {300, 240}, {1050, 1000}, {950, 1000}, {1051, 1000}, {949, 1000},
                          {-1040, -1000}, {-1060, -1000}, {0, 0}, {1, 0}, {-1050, 1000}, {2000, 2000}};
  Rng rng(stable_hash("acceptance.relaxed"));
  while (cases.size() < 50) {
    const long t = static_cast<long>(rng.between(-5000, 5000));
    const long band = std::labs(t) / 20;
    const long delta = cases.size() % 3 == 0 ? band : (cases.size() % 3 == 1 ? band + 1 : rng.between(0, 3 * band + 3));
    cases.push_back({t + (rng.below(2) ? delta : -delta), t});
  }
  std::size_t agree = 0;
  bool named = true;
  for (const auto& c : cases) {
    const bool oracle = c.t == 0 ? c.p == 0 : 20 * std::labs(c.p - c.t) <= std::labs(c.t);
    const bool by_string = evalkit::relaxed_correct(tenths(c.p), tenths(c.t));
    const bool by_double = evalkit::relaxed_correct(c.p / 10.0, c.t / 10.0);
    agree += (by_string == oracle && by_double == oracle) ? 1 : 0;
  }
  named = evalkit::relaxed_correct(24.5, 24.0) && !evalkit::relaxed_correct(30.0, 24.0);

  // Numeric hard negatives, relative error recomputed from caption text.
  chartgen::GeneratorConfig g = x.cfg.generator;
  negcap::NegativeConfig nc = x.cfg.negatives;
  const std::set<chartgen::QaKind> kinds{chartgen::QaKind::value_lookup, chartgen::QaKind::count};
  std::size_t total = 0, in_band = 0, zero_truth = 0, zero_ok = 0, skipped = 0;
  for (std::uint64_t i = 0; total < 10000; ++i) {
    const auto spec = chartgen::sample_chart_spec(mix_seed(stable_hash("acceptance.numeric"), i), g);
    for (const auto& qa : chartgen::generate_qa(spec, i, kinds, g.value_lookups_per_chart)) {
      std::vector<chartgen::CaptionRecord> negs;
      try {
        negs = negcap::synthesize_negatives(qa, spec, nc);
      } catch (const negcap::SynthesisError&) {
        ++skipped;
        continue;
      }
      const auto positive = chartgen::caption_from_qa(qa);
      for (const auto& n : negs) {
        if (n.strategy != chartgen::Strategy::numeric || total >= 10000) continue;
        std::string neg_text;
        const auto truth_text = differing_number(positive, n.text, neg_text);
        const double truth = std::stod(truth_text), value = std::stod(neg_text);
        if (truth == 0.0) {
          ++zero_truth;
          zero_ok += (value >= nc.zero_fallback.first && value <= nc.zero_fallback.second) ? 1 : 0;
          continue;
        }
        const double rel = std::abs(value - truth) / std::abs(truth);
        ++total;
        in_band += (rel >= nc.numeric_min_rel - 1e-12 && rel <= nc.numeric_max_rel + 1e-12) ? 1 : 0;
      }
    }
  }
  const bool ok = agree == cases.size() && named && in_band == total && zero_ok == zero_truth;
  return {ok, std::to_string(agree) + "/" + std::to_string(cases.size()) + " relaxed cases match arithmetic" +
                  (named ? "" : " (named cases wrong)") + "; " + std::to_string(in_band) + "/" +
                  std::to_string(total) + " numeric negatives in [5%, 80%]" +
                  (zero_truth ? "; " + std::to_string(zero_ok) + "/" + std::to_string(zero_truth) +
                                    " zero-truth negatives within the absolute fallback"
                              : "") +
                  (skipped ? "; " + std::to_string(skipped) + " QA pairs without enough negatives" : "")};
}

Verdict criterion10(Experiment&) {
  const auto base = fs::temp_directory_path() / "chartlab-acceptance-determinism";
  fs::remove_all(base);
  std::ostringstream out, err;
  for (const char* run : {"a", "b"}) {
    const int code = cli::run_command({"all", "--preset", "smoke", "--out", (base / run).string()}, out, err);
    if (code != 0) return {false, "`all` exited " + std::to_string(code) + ": " + err.str()};
  }
  const auto dir = pipeline::run_directory(config::preset("smoke"), base / "a");
  const auto other = pipeline::run_directory(config::preset("smoke"), base / "b");
  std::size_t compared = 0;
  std::vector<std::string> differ;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext != ".ckpt" && ext != ".csv" && ext != ".svg") continue;
    const auto rel = fs::relative(e.path(), dir);
    ++compared;
    if (!fs::exists(other / rel) || read_file(e.path()) != read_file(other / rel)) differ.push_back(rel.string());
  }
  fs::remove_all(base);
  const bool ok = differ.empty() && compared > 0;
  return {ok, std::to_string(compared) + " checkpoints/CSVs/SVGs compared" +
                  (differ.empty() ? ", all byte-identical" : ", first difference: " + differ.front())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chartlab acceptance suite"};
  bool strict = false;
  std::vector<int> only;
  int threads = 1;
  app.add_flag("--strict", strict, "exit 1 if any criterion fails");
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
  app.add_option("--threads", threads, "worker threads")->check(CLI::Range(1, 256));
  CLI11_PARSE(app, argc, argv);

  Experiment x;
  x.threads = threads;
  using Fn = Verdict (*)(Experiment&);
  const std::vector<std::pair<const char*, Fn>> criteria = {
      {"method ordering (hard-negative > plain > init)", criterion1},
      {"untrained encoder at chance", criterion2},
      {"scaling ordering", criterion3},
      {"CRLA >= IRLA and total probability", criterion4},
      {"non-linear extraction (MLP vs linear probe)", criterion5},
      {"random-init encoder probe gap", criterion6},
      {"gradient correctness", criterion7},
      {"analytic identities", criterion8},
      {"metric exactness", criterion9},
      {"determinism of the smoke pipeline", criterion10},
  };
  int passed = 0, failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second(x);
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    (v.pass ? passed : failed)++;
    std::printf("%s  %2d  %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d passed, %d failed\n", passed, failed);
  return strict && failed > 0 ? 1 : 0;
}

#include "chartlab/pipeline/pipeline.hpp"

#include <map>

#include "chartlab/analysis/analysis.hpp"
#include "chartlab/evalkit/evalkit.hpp"
#include "chartlab/negcap/negcap.hpp"
#include "chartlab/trainer/trainer.hpp"
#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"

namespace chartlab::pipeline {
namespace {

using chartgen::Split;

void note(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << "\n" << std::flush;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
}

trainer::TrainConfig variant_training(const Context& ctx, const std::string& variant) {
  auto t = ctx.config.training;
  if (variant == "fine-tuned") t.k_train = 0;
  return t;
}

num::ParamSet load_variant(const Context& ctx, const std::string& variant) {
  return trainer::load_checkpoint(ctx.layout.checkpoint(variant), ctx.config.encoder);
}

std::vector<evalkit::RetrievalInstance> eval_instances(const Context& ctx, const chartgen::Dataset& eval) {
  return evalkit::build_retrieval_instances(eval, ctx.config.evaluation.k, ctx.config.evaluation.seed);
}

std::vector<analysis::ProbeReport> run_probes(const Context& ctx, const num::ParamSet& params,
                                              const chartgen::Dataset& data) {
  const auto& a = ctx.config.analysis;
  const auto fe = analysis::extract_frozen_embeddings(params, ctx.config.encoder, data, ctx.config.generator, a.tasks);
  std::vector<analysis::ProbeReport> reports;
  for (auto task : a.tasks) {
    const auto& labels = fe.tasks.at(task);
    for (auto kind : {analysis::ProbeKind::linear, analysis::ProbeKind::mlp}) {
      auto cfg = a.probe;
      cfg.kind = kind;
      reports.push_back(analysis::fit_probe(fe.embeddings, labels.labels, labels.classes, to_string(task), cfg));
    }
  }
  return reports;
}

std::map<std::string, std::vector<analysis::ProbeReport>> probe_variants(const Context& ctx) {
  const auto data = chartgen::load_dataset(ctx.layout.data(Split::train));
  std::map<std::string, std::vector<analysis::ProbeReport>> out;
  make_dirs(ctx.layout.analysis());
  for (const auto& v : kVariants) {
    out[v] = run_probes(ctx, load_variant(ctx, v), data);
    const auto path = ctx.layout.analysis() / ("probes_" + v + ".csv");
    write_file(path, analysis::probes_csv(out[v]));
    note(ctx, "probe: " + v + " -> " + path.string());
  }
  return out;
}

}  // namespace

fs::path run_directory(const config::RunConfig& config, const fs::path& base) {
  return base / config::config_digest(config).substr(0, 12);
}

void prepare(const Context& ctx) {
  make_dirs(ctx.layout.root);
  const auto text = config::to_json(ctx.config);
  const auto path = ctx.layout.resolved_config();
  if (fs::exists(path) && read_file(path) != text) {
    throw DigestError(path.string() + ": run directory belongs to a different configuration");
  }
  write_file(path, text);
  write_file(ctx.layout.root / "config.sha256", config::config_digest(ctx.config) + "\n");
}

void gen(const Context& ctx) {
  for (auto split : {Split::train, Split::eval}) {
    const auto dir = ctx.layout.data(split);
    const auto ds = chartgen::build_dataset(ctx.config.generator, split, dir, ctx.threads);
    note(ctx, "gen: " + std::string(to_string(split)) + " " + std::to_string(ds.entries.size()) +
                  " charts, manifest sha256 " + sha256_file(dir / "manifest.json"));
  }
}

void neg(const Context& ctx) {
  for (auto split : {Split::train, Split::eval}) {
    auto ds = chartgen::load_dataset(ctx.layout.data(split));
    negcap::add_negatives(ds, ctx.config.negatives, ctx.threads);
    const auto dir = ctx.layout.negatives(split);
    chartgen::write_dataset(ds, dir, ctx.threads);
    note(ctx, "neg: " + std::string(to_string(split)) + " K=" + std::to_string(ctx.config.negatives.k) +
                  ", manifest sha256 " + sha256_file(dir / "manifest.json"));
  }
}

void train(const Context& ctx) {
  const auto data = chartgen::load_dataset(ctx.layout.negatives(Split::train));
  const auto& enc = ctx.config.encoder;
  const auto init = dualenc::init_params(enc, ctx.config.init_seed);
  make_dirs(ctx.layout.checkpoint("init").parent_path());
  make_dirs(ctx.layout.logs());
  trainer::save_checkpoint(init, enc, ctx.layout.checkpoint("init"));
  for (const std::string variant : {"fine-tuned", "hard-negative"}) {
    const auto cfg = variant_training(ctx, variant);
    trainer::TrainHooks hooks;
    if (cfg.checkpoint_every > 0) hooks.checkpoint_dir = ctx.layout.root / "models" / (variant + "-steps");
    const auto result = trainer::train(data, enc, cfg, init, hooks);
    trainer::save_checkpoint(result.params, enc, ctx.layout.checkpoint(variant));
    write_file(ctx.layout.logs() / (variant + "_loss.csv"), result.log.to_csv());
    write_file(ctx.layout.logs() / (variant + "_summary.json"), result.log.summary_json());
    const double last = result.log.steps.empty() ? 0.0 : result.log.steps.back().loss;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", last);
    note(ctx, "train: " + variant + " K=" + std::to_string(cfg.k_train) + ", " +
                  std::to_string(result.log.steps.size()) + " steps, final loss " + buf);
  }
}

void eval(const Context& ctx) {
  const auto data = chartgen::load_dataset(ctx.layout.negatives(Split::eval));
  const auto instances = eval_instances(ctx, data);
  make_dirs(ctx.layout.eval());
  std::vector<std::pair<std::string, evalkit::RetrievalReport>> rows;
  for (const auto& v : kVariants) {
    std::vector<evalkit::InstanceResult> results;
    const auto report = evalkit::evaluate_retrieval(load_variant(ctx, v), ctx.config.encoder, data, instances, &results);
    write_file(ctx.layout.eval() / (v + ".json"), evalkit::report_json(report, v));
    write_file(ctx.layout.eval() / (v + "_results.jsonl"), evalkit::results_jsonl(results));
    rows.emplace_back(v, report);
    char buf[96];
    std::snprintf(buf, sizeof buf, "eval: %-13s accuracy %.4f (random %.4f, n=%zu)", v.c_str(),
                  report.overall.accuracy(), report.random_baseline, report.overall.n);
    note(ctx, buf);
  }
  write_file(ctx.layout.eval() / "comparison.csv", evalkit::comparison_csv(rows));
}

void probe(const Context& ctx) { probe_variants(ctx); }

void analyze(const Context& ctx) {
  const auto& cfg = ctx.config;
  analysis::AnalysisReport report;
  report.probes = probe_variants(ctx).at("hard-negative");

  const auto train_plain = chartgen::load_dataset(ctx.layout.data(Split::train));
  const auto eval_neg = chartgen::load_dataset(ctx.layout.negatives(Split::eval));
  const auto hn = load_variant(ctx, "hard-negative");
  const std::vector<analysis::ProbeTask> crla_tasks{analysis::ProbeTask::count, analysis::ProbeTask::title};
  const auto fe_train = analysis::extract_frozen_embeddings(hn, cfg.encoder, train_plain, cfg.generator, crla_tasks);
  const auto fe_eval = analysis::extract_frozen_embeddings(hn, cfg.encoder, eval_neg, cfg.generator, crla_tasks);
  std::vector<evalkit::InstanceResult> results;
  evalkit::evaluate_retrieval(hn, cfg.encoder, eval_neg, eval_instances(ctx, eval_neg), &results);
  auto mlp = cfg.analysis.probe;
  mlp.kind = analysis::ProbeKind::mlp;
  report.crla_irla = analysis::crla_irla_curve(fe_train, fe_eval, results, mlp, cfg.analysis.crla_steps);
  note(ctx, "analyze: crla/irla at " + std::to_string(report.crla_irla.size()) + " probe steps");

  if (cfg.analysis.scaling) {
    analysis::ScalingConfig sc;
    sc.fractions = cfg.analysis.fractions;
    sc.seeds = cfg.analysis.scaling_seeds;
    sc.k_train = cfg.training.k_train;
    sc.k_eval = cfg.evaluation.k;
    sc.eval_seed = cfg.evaluation.seed;
    sc.subset_seed = cfg.analysis.subset_seed;
    sc.encoder = cfg.encoder;
    sc.training = cfg.training;
    sc.threads = ctx.threads;
    const auto train_neg = chartgen::load_dataset(ctx.layout.negatives(Split::train));
    report.scaling = analysis::scaling_curves(train_neg, eval_neg, sc);
    note(ctx, "analyze: " + std::to_string(report.scaling.size()) + " scaling cells");
  }

  report.provenance["config_sha256"] = config::config_digest(cfg);
  report.provenance["train_data_sha256"] = chartgen::content_digest(train_plain);
  report.provenance["eval_negatives_sha256"] = chartgen::content_digest(eval_neg);
  for (const auto& v : kVariants) report.provenance[v + "_checkpoint_sha256"] = sha256_file(ctx.layout.checkpoint(v));
  for (const auto& p : analysis::emit_report(report, ctx.layout.analysis())) note(ctx, "analyze: wrote " + p.string());
}

void plot(const Context& ctx) {
  const auto dir = ctx.layout.analysis();
  bool any = false;
  if (fs::exists(dir / "scaling.csv")) {
    write_file(dir / "scaling.svg", analysis::scaling_svg(analysis::parse_scaling_csv(read_file(dir / "scaling.csv"))));
    note(ctx, "plot: wrote " + (dir / "scaling.svg").string());
    any = true;
  }
  if (fs::exists(dir / "crla_irla.csv")) {
    write_file(dir / "crla_irla.svg",
               analysis::crla_irla_svg(analysis::parse_crla_irla_csv(read_file(dir / "crla_irla.csv"))));
    note(ctx, "plot: wrote " + (dir / "crla_irla.svg").string());
    any = true;
  }
  if (!any) throw IoError(dir.string(), "no scaling.csv or crla_irla.csv to plot; run analyze first");
}

void all(const Context& ctx) {
  gen(ctx);
  neg(ctx);
  train(ctx);
  eval(ctx);
  analyze(ctx);
  plot(ctx);
}

}  // namespace chartlab::pipeline

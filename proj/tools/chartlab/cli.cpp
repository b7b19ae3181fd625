#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <map>

#include <CLI11.hpp>

#include "chartlab/pipeline/pipeline.hpp"
#include "chartlab/util/error.hpp"

namespace chartlab::cli {
namespace {

struct Options {
  std::string config_path;
  std::string preset = "default";
  std::string out;
  int threads = 1;
};

const std::map<std::string, std::pair<std::string, std::function<void(const pipeline::Context&)>>>& stages() {
  static const std::map<std::string, std::pair<std::string, std::function<void(const pipeline::Context&)>>> s = {
      {"gen", {"render charts and QA pairs for both splits", pipeline::gen}},
      {"neg", {"synthesize hard-negative captions", pipeline::neg}},
      {"train", {"train the plain and hard-negative variants", pipeline::train}},
      {"eval", {"retrieval evaluation and the comparison table", pipeline::eval}},
      {"probe", {"linear and MLP probes on frozen embeddings", pipeline::probe}},
      {"analyze", {"probes, CRLA/IRLA and scaling curves", pipeline::analyze}},
      {"plot", {"SVG plots from the analysis tables", pipeline::plot}},
      {"all", {"every stage in order", pipeline::all}},
  };
  return s;
}

std::filesystem::path base_directory(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("CHARTLAB_RUN_DIR"); env && *env) return env;
  return "runs";
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"chartlab: chart retrieval experiments with hard-negative captions", "chartlab"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options o;
  auto* config_opt = app.add_option("-c,--config", o.config_path, "JSON run configuration");
  std::string presets;
  for (const auto& n : config::preset_names()) presets += (presets.empty() ? "" : ", ") + n;
  app.add_option("--preset", o.preset, "base configuration when no --config is given (" + presets + ")")
      ->check(CLI::IsMember(config::preset_names()))
      ->excludes(config_opt);
  app.add_option("-o,--out", o.out, "parent of the run directory (default $CHARTLAB_RUN_DIR or ./runs)");
  app.add_option("--threads", o.threads, "worker threads")->check(CLI::Range(1, 256));
  for (const auto& [name, stage] : stages()) app.add_subcommand(name, stage.first);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  pipeline::Context ctx;
  try {
    ctx.config = o.config_path.empty() ? config::preset(o.preset) : config::load_config(o.config_path);
  } catch (const ConfigError& e) {
    err << "config error: " << (o.config_path.empty() ? "" : o.config_path + ": ") << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  ctx.layout.root = pipeline::run_directory(ctx.config, base_directory(o));
  ctx.threads = o.threads;
  ctx.log = &out;

  try {
    pipeline::prepare(ctx);
    out << "run directory: " << ctx.layout.root.string() << "\n";
    stages().at(command).second(ctx);
  } catch (const std::exception& e) {
    err << "error: " << command << ": " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace chartlab::cli

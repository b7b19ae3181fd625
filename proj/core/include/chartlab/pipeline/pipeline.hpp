#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "chartlab/config/run_config.hpp"

namespace chartlab::pipeline {

namespace fs = std::filesystem;

/// Variant names, in comparison-table order.
inline const std::vector<std::string> kVariants = {"init", "fine-tuned", "hard-negative"};

/// Run directory layout relative to the run root.
struct Layout {
  fs::path root;
  fs::path resolved_config() const { return root / "resolved_config.json"; }
  fs::path data(chartgen::Split s) const { return root / "data" / std::string(chartgen::to_string(s)); }
  fs::path negatives(chartgen::Split s) const { return root / "negatives" / std::string(chartgen::to_string(s)); }
  fs::path checkpoint(const std::string& variant) const { return root / "models" / (variant + ".ckpt"); }
  fs::path logs() const { return root / "logs"; }
  fs::path eval() const { return root / "eval"; }
  fs::path analysis() const { return root / "analysis"; }
};

/// <base>/<first 12 hex digits of the config digest>.
fs::path run_directory(const config::RunConfig& config, const fs::path& base);

struct Context {
  config::RunConfig config;
  Layout layout;
  int threads = 1;
  std::ostream* log = nullptr;  ///< progress lines; may be null
};

/// Creates the run directory and writes the resolved config and its digest.
/// Throws DigestError if the directory holds a different resolved config.
void prepare(const Context& ctx);

/// Each stage reads the previous stage's files and throws IoError naming
/// the missing path when they are absent.
void gen(const Context& ctx);
void neg(const Context& ctx);
void train(const Context& ctx);
void eval(const Context& ctx);
void probe(const Context& ctx);
void analyze(const Context& ctx);
void plot(const Context& ctx);
/// gen, neg, train, eval, analyze and plot.
void all(const Context& ctx);

}  // namespace chartlab::pipeline

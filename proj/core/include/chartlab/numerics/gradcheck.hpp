#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "chartlab/numerics/tape.hpp"

namespace chartlab::num {

/// Builds a scalar loss on `tape` from `params` (via Tape::param).
using LossFn = std::function<Var(Tape& tape, const ParamSet& params)>;

struct FdOptions {
  /// 0 checks every entry; otherwise at most this many sampled entries per
  /// parameter tensor.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  /// Lower bound on the relative-error denominator; raise it when some true
  /// gradients are exactly zero and differences only see rounding noise.
  double denominator_floor = 1e-12;
};

struct FdReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients with central differences at `step`.
/// Relative error per entry is |a - n| / max(|a|, |n|, denominator_floor).
/// Throws Error if two evaluations at the same point disagree.
FdReport finite_diff_report(const LossFn& fn, const ParamSet& params, double step,
                            const FdOptions& options = {});

double finite_diff_check(const LossFn& fn, const ParamSet& params, double step,
                         const FdOptions& options = {});

}  // namespace chartlab::num

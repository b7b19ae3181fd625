#include "chartlab/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"

namespace chartlab::num {
namespace {

double evaluate(const LossFn& fn, const ParamSet& params) {
  Tape tape;
  const Var loss = fn(tape, params);
  return tape.value(loss).item();
}

}  // namespace

FdReport finite_diff_report(const LossFn& fn, const ParamSet& params, double step, const FdOptions& options) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  GradientSet analytic;
  double base = 0.0;
  {
    Tape tape;
    const Var loss = fn(tape, params);
    base = tape.value(loss).item();
    analytic = tape.backward(loss);
  }
  if (evaluate(fn, params) != base) {
    throw Error("finite_diff_check: loss function is not deterministic");
  }

  FdReport report;
  Rng rng(options.seed);
  ParamSet probe = params;
  for (auto& [name, tensor] : probe) {
    std::vector<std::size_t> idx(tensor.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries_per_param != 0 && idx.size() > options.max_entries_per_param) {
      rng.shuffle(idx);
      idx.resize(options.max_entries_per_param);
      std::sort(idx.begin(), idx.end());
    }
    const auto g_it = analytic.find(name);
    for (std::size_t i : idx) {
      const double orig = tensor[i];
      tensor[i] = orig + step;
      const double up = evaluate(fn, probe);
      tensor[i] = orig - step;
      const double down = evaluate(fn, probe);
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = g_it == analytic.end() ? 0.0 : g_it->second[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_relative_error || report.worst_param.empty()) {
        if (rel >= report.max_relative_error) {
          report.max_relative_error = rel;
          report.worst_param = name;
          report.worst_index = i;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

double finite_diff_check(const LossFn& fn, const ParamSet& params, double step, const FdOptions& options) {
  return finite_diff_report(fn, params, step, options).max_relative_error;
}

}  // namespace chartlab::num

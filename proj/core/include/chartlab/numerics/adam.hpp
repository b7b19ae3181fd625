#pragma once

#include <cstdint>

#include "chartlab/numerics/tensor.hpp"

namespace chartlab::num {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Optimizer state. Moments are created zero-filled the first time a
/// parameter is seen, so a default-constructed state is "step 0".
struct AdamState {
  std::uint64_t step = 0;
  ParamSet first_moment;
  ParamSet second_moment;
  AdamHyper hyper;
};

/// Throws ConfigError unless 0<beta1<1, 0<beta2<1, epsilon>0, lr>=0.
void validate(const AdamHyper& h);

struct AdamResult {
  ParamSet params;
  AdamState state;
};

/// One bias-corrected Adam update. Parameters without an entry in `grads`
/// are treated as having a zero gradient. Pure: inputs are not modified.
AdamResult adam_step(const AdamState& state, const ParamSet& params, const GradientSet& grads);

/// In-place form of adam_step used by the training loop.
void adam_update(AdamState& state, ParamSet& params, const GradientSet& grads);

}  // namespace chartlab::num

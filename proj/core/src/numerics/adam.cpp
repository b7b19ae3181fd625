#include "chartlab/numerics/adam.hpp"

#include <cmath>

#include "chartlab/util/error.hpp"

namespace chartlab::num {

void validate(const AdamHyper& h) {
  if (!(h.beta1 > 0.0 && h.beta1 < 1.0)) throw ConfigError("beta1", "must lie in (0, 1)");
  if (!(h.beta2 > 0.0 && h.beta2 < 1.0)) throw ConfigError("beta2", "must lie in (0, 1)");
  if (!(h.epsilon > 0.0)) throw ConfigError("epsilon", "must be positive");
  if (!(h.learning_rate >= 0.0)) throw ConfigError("learning_rate", "must be non-negative");
}

void adam_update(AdamState& state, ParamSet& params, const GradientSet& grads) {
  validate(state.hyper);
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("adam: gradient for unknown parameter '" + name + "'");
    if (!it->second.same_shape(g)) {
      throw ContractError("adam: gradient shape " + shape_string(g.shape()) + " does not match parameter '" +
                          name + "' " + shape_string(it->second.shape()));
    }
  }
  state.step += 1;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (auto& [name, p] : params) {
    auto [m_it, m_new] = state.first_moment.try_emplace(name, p.shape(), 0.0);
    auto [v_it, v_new] = state.second_moment.try_emplace(name, p.shape(), 0.0);
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    if (!m.same_shape(p) || !v.same_shape(p)) {
      throw ContractError("adam: moment shape does not match parameter '" + name + "'");
    }
    auto g_it = grads.find(name);
    const Tensor* g = g_it == grads.end() ? nullptr : &g_it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
    }
  }
}

AdamResult adam_step(const AdamState& state, const ParamSet& params, const GradientSet& grads) {
  AdamResult r{params, state};
  adam_update(r.state, r.params, grads);
  return r;
}

}  // namespace chartlab::num

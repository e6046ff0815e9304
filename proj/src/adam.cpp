#include "mef/adam.hpp"

#include <cmath>

#include "mef/error.hpp"

namespace mef {

void adam_step(Grid& param, const Grid& grad, AdamState& state, const AdamConfig& config) {
  require_same_shape(param, grad, "adam_step");
  if (state.t < 0) throw InvalidArgument("adam_step: negative step counter");
  if (state.m.empty()) {
    state.m = Grid(param.shape());
    state.v = Grid(param.shape());
  }
  require_same_shape(param, state.m, "adam_step: first moment");
  require_same_shape(param, state.v, "adam_step: second moment");

  state.t += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  auto& p = param.vec();
  auto& m = state.m.vec();
  auto& v = state.v.vec();
  const auto& g = grad.vec();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    p[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

void Adam::step(ParamSet& params, const ParamSet& grads) {
  if (params.size() != grads.size()) throw InvalidArgument("adam: parameter/gradient count mismatch");
  if (states_.empty()) states_.resize(params.size());
  if (states_.size() != params.size()) throw InvalidArgument("adam: parameter set changed between steps");
  auto g = grads.begin();
  std::size_t i = 0;
  for (auto& [name, value] : params) {
    if (g->first != name) throw InvalidArgument("adam: gradient for '" + g->first + "' where '" + name + "' expected");
    adam_step(value, g->second, states_[i], config_);
    ++g;
    ++i;
  }
  ++steps_;
}

}  // namespace mef

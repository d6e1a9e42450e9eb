#include "wmnav/optim.hpp"

#include <cmath>

#include "wmnav/error.hpp"

namespace wmnav {

void adam_step(const std::vector<Parameter*>& params, OptimState& state) {
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  WMNAV_REQUIRE(state.m.size() == params.size(), "adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                                                      " tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    WMNAV_REQUIRE(p.grad.shape() == p.value.shape() && state.m[i].shape() == p.value.shape(),
                  "adam_step: shape mismatch for " + p.name);
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t));
  const float step = static_cast<float>(state.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    const float* g = p.grad.data();
    float* w = p.value.data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0f - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0f - state.beta2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + state.eps);
    }
  }
}

}  // namespace wmnav

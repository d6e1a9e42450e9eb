#pragma once

#include <vector>

#include "wmnav/autodiff.hpp"

namespace wmnav {

struct OptimState {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  long t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Bias-corrected Adam update applied in place to each parameter's value
/// using its accumulated grad. Moments are created lazily on the first call.
void adam_step(const std::vector<Parameter*>& params, OptimState& state);

}  // namespace wmnav

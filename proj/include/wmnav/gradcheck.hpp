#pragma once

#include <functional>
#include <vector>

#include "wmnav/autodiff.hpp"

namespace wmnav {

using LossFn = std::function<Var(Tape&)>;

/// Runs one forward/backward pass and returns d(loss)/d(param) for every
/// parameter (parameter grads are reset first).
std::vector<Tensor> compute_gradients(const LossFn& loss, const std::vector<Parameter*>& params);

struct GradCheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
};

/// Compares analytic gradients against central differences on up to 64
/// coordinates per tensor (all of them when smaller).
///
/// Error per coordinate is |a - n| / max(|a|, |n|, floor) with
/// floor = 200 * ulp(max(|L|, 1)) / eps: a central difference of a float32
/// loss cannot resolve gradients much finer than ulp / eps, so smaller
/// gradients are held to an absolute standard instead.
GradCheckResult finite_diff_check(const LossFn& loss, const std::vector<Parameter*>& params, float eps,
                                  unsigned long long seed = 0, int max_coords = 64);

}  // namespace wmnav

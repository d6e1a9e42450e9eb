#include "wmnav/gradcheck.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>
#include <random>

#include "wmnav/error.hpp"

namespace wmnav {

std::vector<Tensor> compute_gradients(const LossFn& loss, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  Var l = loss(tape);
  tape.backward(l);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Parameter* p : params) grads.push_back(p->grad);
  return grads;
}

GradCheckResult finite_diff_check(const LossFn& loss, const std::vector<Parameter*>& params, float eps,
                                  unsigned long long seed, int max_coords) {
  WMNAV_REQUIRE(eps > 0.0f && eps <= 1e-2f, "finite_diff_check: eps must lie in (0, 1e-2]");
  const auto eval = [&] {
    Tape tape;
    return static_cast<double>(loss(tape).item());
  };
  const std::vector<Tensor> analytic = compute_gradients(loss, params);
  const double base = eval();
  // A float32 loss moves in steps of one ulp; the difference quotient
  // therefore resolves gradients only to about ulp / eps. Magnitudes below
  // 200 ulps / eps (a few ulps of rounding noise, 1e-2 tolerance) are
  // compared in absolute terms.
  const float mag = std::max(std::abs(static_cast<float>(base)), 1.0f);
  const double ulp = static_cast<double>(std::nextafter(mag, INFINITY)) - mag;
  const double floor = 200.0 * ulp / eps;

  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (static_cast<int>(coords.size()) > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_coords));
    }
    for (std::size_t k : coords) {
      const float orig = p.value[k];
      p.value[k] = orig + eps;
      const double up = eval();
      p.value[k] = orig - eps;
      const double down = eval();
      p.value[k] = orig;
      // The realised step differs from 2*eps after float rounding.
      const double h = static_cast<double>(orig + eps) - static_cast<double>(orig - eps);
      const double numeric = (up - down) / h;
      const double a = analytic[pi][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace wmnav

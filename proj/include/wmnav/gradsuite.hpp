#pragma once

// Finite-difference checks of every training loss on small random instances.

#include <cstdint>
#include <string>
#include <vector>

#include "wmnav/gradcheck.hpp"

namespace wmnav {

enum class LossKind : std::uint8_t { Vae, ContrastiveCosine, ContrastiveMse, Mdn, PpoSurrogate };
inline constexpr LossKind kAllLosses[] = {LossKind::Vae, LossKind::ContrastiveCosine, LossKind::ContrastiveMse,
                                          LossKind::Mdn, LossKind::PpoSurrogate};
std::string loss_kind_name(LossKind k);

/// One randomized instance of the loss, drawn from `seed`, checked with eps 1e-3.
GradCheckResult check_loss_gradient(LossKind kind, std::uint64_t seed);

struct GradSuiteRow {
  LossKind kind;
  int seeds = 0;
  int failures = 0;        // instances at or above the tolerance
  double worst = 0;        // largest relative error seen
  double seconds = 0;
};

std::vector<GradSuiteRow> run_grad_suite(int seeds, double tolerance = 1e-2, std::uint64_t first_seed = 0);

}  // namespace wmnav

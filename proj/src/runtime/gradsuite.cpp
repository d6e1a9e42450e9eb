#include "wmnav/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "wmnav/encoder.hpp"
#include "wmnav/error.hpp"
#include "wmnav/memory.hpp"
#include "wmnav/policy.hpp"
#include "wmnav/vae.hpp"

namespace wmnav {

std::string loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::Vae: return "vae";
    case LossKind::ContrastiveCosine: return "contrastive-cosine";
    case LossKind::ContrastiveMse: return "contrastive-mse";
    case LossKind::Mdn: return "mdn";
    case LossKind::PpoSurrogate: return "ppo-surrogate";
  }
  return "?";
}

namespace {

Tensor gaussian(Shape s, Rng& rng, float scale = 1.0f) {
  Tensor t(std::move(s));
  std::normal_distribution<float> n(0.0f, scale);
  for (float& v : t.vec()) v = n(rng);
  return t;
}

}  // namespace

GradCheckResult check_loss_gradient(LossKind kind, std::uint64_t seed) {
  Rng rng(seed);
  // Steps: the widest the checker allows where third derivatives are mild,
  // smaller for the mixture log-sigmas (large curvature) and for the PPO loss,
  // whose clip edges are kinks that ratios are kept clear of.
  constexpr float eps = 1e-2f;
  switch (kind) {
    case LossKind::Vae: {
      // Two 8x8 BEV targets; decoder logits and posterior parameters are the inputs.
      Parameter logits("logits", gaussian({2, 1, 8, 8}, rng));
      Parameter mu("mu", gaussian({2, kLatentDim}, rng));
      Parameter ls("log_sigma", gaussian({2, kLatentDim}, rng, 0.5f));
      Tensor y({2, 1, 8, 8});
      for (float& v : y.vec()) v = static_cast<float>(rng() % 2);
      return finite_diff_check([&](Tape& t) { return vae_loss_terms(t.param(logits), t.param(mu), t.param(ls), y, 1.0f); },
                               {&logits, &mu, &ls}, eps, seed);
    }
    case LossKind::ContrastiveCosine: {
      Parameter z("z", gaussian({4, kLatentDim}, rng)), zp("z_prime", gaussian({4, kLatentDim}, rng));
      return finite_diff_check([&](Tape& t) { return contrastive_loss_cosine(t.param(z), t.param(zp), 0.5f); },
                               {&z, &zp}, eps, seed);
    }
    case LossKind::ContrastiveMse: {
      Parameter z("z", gaussian({4, kLatentDim}, rng)), zp("z_prime", gaussian({4, kLatentDim}, rng));
      return finite_diff_check([&](Tape& t) { return contrastive_loss_mse(t.param(z), t.param(zp)); }, {&z, &zp}, eps,
                               seed);
    }
    case LossKind::Mdn: {
      const int k = 1 + static_cast<int>(seed % 5);
      Parameter logits("logits", gaussian({2, k}, rng));
      Parameter means("means", gaussian({2, k * kLatentDim}, rng));
      Parameter ls("log_sigmas", gaussian({2, k}, rng, 0.3f));
      Tensor target = gaussian({2, kLatentDim}, rng);
      return finite_diff_check(
          [&](Tape& t) { return mdn_nll_terms(t.param(logits), t.param(means), t.param(ls), target); },
          {&logits, &means, &ls}, 3e-3f, seed);
    }
    case LossKind::PpoSurrogate: {
      Parameter mean("mean", gaussian({6, kActionDim}, rng, 0.5f));
      Parameter ls("log_std", gaussian({kActionDim}, rng, 0.3f));
      Parameter values("values", gaussian({6}, rng));
      Tensor u = gaussian({6, kActionDim}, rng), adv = gaussian({6}, rng), ret = gaussian({6}, rng);
      // Ratios below, inside and above the clip window, each clear of its edges.
      constexpr float kRatios[] = {0.6f, 0.9f, 1.0f, 1.1f, 1.4f};
      Tensor old({6});
      {
        Tape t;
        Var lp = gaussian_log_prob(t.param(mean), t.param(ls), u);
        std::normal_distribution<float> jitter(0.0f, 0.01f);
        for (std::size_t i = 0; i < 6; ++i)
          old[i] = lp.value()[i] - std::log(kRatios[rng() % 5]) + jitter(rng);
      }
      return finite_diff_check(
          [&](Tape& t) {
            Var l = t.param(ls);
            Var surr = clipped_surrogate(gaussian_log_prob(t.param(mean), l, u), old, adv, 0.2f);
            Var vloss = ad::mean(ad::square(ad::sub(t.param(values), t.constant(ret))));
            return ad::sub(ad::add(ad::scale(surr, -1.0f), ad::scale(vloss, 0.5f)), ad::scale(ad::sum(l), 0.01f));
          },
          {&mean, &ls, &values}, 1e-3f, seed);
    }
  }
  throw ContractError("check_loss_gradient: unknown loss");
}

std::vector<GradSuiteRow> run_grad_suite(int seeds, double tolerance, std::uint64_t first_seed) {
  std::vector<GradSuiteRow> rows;
  for (LossKind k : kAllLosses) {
    GradSuiteRow r;
    r.kind = k;
    r.seeds = seeds;
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < seeds; ++s) {
      const double e = check_loss_gradient(k, first_seed + static_cast<std::uint64_t>(s)).max_rel_error;
      r.worst = std::max(r.worst, e);
      r.failures += !(e < tolerance);
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(r);
  }
  return rows;
}

}  // namespace wmnav

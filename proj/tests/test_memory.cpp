#include <cmath>

#include "doctest.h"
#include "wmnav/error.hpp"
#include "wmnav/gradcheck.hpp"
#include "wmnav/memory.hpp"

using namespace wmnav;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

std::vector<float> randn(std::size_t n, Rng& rng, float s = 1.0f) {
  std::normal_distribution<float> d(0.0f, s);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

MemoryConfig small_config() {
  MemoryConfig c;
  c.hidden = 32;
  c.mixtures = 3;
  c.chunk = 8;
  return c;
}

// z_{t+1} = 0.9 z_t + B a_t + noise; the action dependence is invisible to copy-last.
std::vector<LatentSequence> synthetic_sequences(int count, int len, std::uint64_t seed) {
  Rng rng(seed);
  Rng brng(1234);
  const auto b = randn(2 * kLatentDim, brng, 0.5f);
  std::uniform_real_distribution<float> u(-1, 1);
  std::normal_distribution<float> noise(0, 0.05f);
  std::vector<LatentSequence> out;
  for (int s = 0; s < count; ++s) {
    LatentSequence seq;
    seq.latents = Tensor({len, kLatentDim});
    auto z = randn(kLatentDim, rng);
    for (int t = 0; t < len; ++t) {
      Action a(u(rng), u(rng));
      seq.actions.push_back(a);
      std::copy(z.begin(), z.end(), seq.latents.data() + static_cast<std::size_t>(t) * kLatentDim);
      for (int i = 0; i < kLatentDim; ++i)
        z[static_cast<std::size_t>(i)] = 0.9f * z[static_cast<std::size_t>(i)] + b[static_cast<std::size_t>(i)] * a.throttle +
                                         b[static_cast<std::size_t>(kLatentDim + i)] * a.steer + noise(rng);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace

TEST_CASE("mdn_step produces a valid mixture and is deterministic") {
  Rng rng(1);
  MdnLstm m(small_config(), rng);
  for (int trial = 0; trial < 50; ++trial) {
    MemoryHidden h{randn(32, rng), randn(32, rng)};
    auto z = randn(32, rng);
    Action a(0.3, -0.2);
    auto [h1, o1] = m.mdn_step(h, z, a);
    auto [h2, o2] = m.mdn_step(h, z, a);
    double s = 0;
    for (float w : o1.weights) s += w;
    CHECK(std::abs(s - 1.0) < 1e-6);
    for (float sg : o1.sigmas) CHECK(sg > 0.0f);
    CHECK(o1.means == o2.means);
    CHECK(h1.h == h2.h);
  }
}

TEST_CASE("the previous action changes the prediction") {
  Rng rng(2);
  MdnLstm m(small_config(), rng);
  const auto h = m.initial_hidden();
  const auto z = randn(32, rng);
  auto a = m.mdn_step(h, z, Action(1.0, 0.0)).second;
  auto b = m.mdn_step(h, z, Action(-1.0, 0.5)).second;
  CHECK(a.means != b.means);
}

TEST_CASE("closed-form NLL values") {
  std::vector<float> mu(32, 0.25f);
  const MdnOutput one = make_mdn_output({0.3f}, mu, {0.0f});
  CHECK(mdn_nll(one, mu) == doctest::Approx(16.0 * kLog2Pi).epsilon(1e-9));
  CHECK(16.0 * kLog2Pi == doctest::Approx(29.4060).epsilon(1e-4));

  Tape t;
  Var nll = mdn_nll_terms(t.constant(Tensor({1, 1}, 0.3f)), t.constant(Tensor({1, 32}, mu)), t.constant(Tensor({1, 1})),
                          Tensor({1, 32}, mu));
  CHECK(std::abs(nll.item() - 16.0 * kLog2Pi) < 1e-3);

  // K = 1 matches the diagonal Gaussian log-density for random sigma.
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = randn(32, rng), z = randn(32, rng);
    const float ls = std::uniform_real_distribution<float>(-1, 1)(rng);
    double d = 0;
    for (int i = 0; i < 32; ++i) d += std::pow(z[static_cast<std::size_t>(i)] - m[static_cast<std::size_t>(i)], 2);
    const double expected = 0.5 * d * std::exp(-2.0 * ls) + 32 * ls + 16 * kLog2Pi;
    CHECK(mdn_nll(make_mdn_output({0.0f}, m, {ls}), z) == doctest::Approx(expected).epsilon(1e-4));
    Tape tt;
    Var v = mdn_nll_terms(tt.constant(Tensor({1, 1})), tt.constant(Tensor({1, 32}, m)), tt.constant(Tensor({1, 1}, ls)),
                          Tensor({1, 32}, z));
    CHECK(v.item() == doctest::Approx(expected).epsilon(1e-4));
  }
}

TEST_CASE("mixture identities") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto logits = randn(3, rng), means = randn(96, rng), ls = randn(3, rng, 0.3f), z = randn(32, rng);
    const double base = mdn_nll(make_mdn_output(logits, means, ls), z);

    // Duplicate component 0 and halve its weight.
    auto l2 = logits;
    l2[0] -= std::log(2.0f);
    l2.push_back(l2[0]);
    auto m2 = means;
    m2.insert(m2.end(), means.begin(), means.begin() + 32);
    auto s2 = ls;
    s2.push_back(ls[0]);
    CHECK(mdn_nll(make_mdn_output(l2, m2, s2), z) == doctest::Approx(base).epsilon(1e-5));

    // Permute components.
    std::vector<float> lp{logits[2], logits[0], logits[1]}, sp{ls[2], ls[0], ls[1]}, mp;
    for (int j : {2, 0, 1}) mp.insert(mp.end(), means.begin() + j * 32, means.begin() + (j + 1) * 32);
    CHECK(mdn_nll(make_mdn_output(lp, mp, sp), z) == doctest::Approx(base).epsilon(1e-5));
  }
}

TEST_CASE("NLL grows as the target leaves every mean") {
  Rng rng(5);
  auto means = randn(64, rng);
  const MdnOutput o = make_mdn_output({0.2f, -0.1f}, means, {0.0f, 0.1f});
  auto dir = randn(32, rng);
  double norm = 0;
  for (float d : dir) norm += d * d;
  for (float& d : dir) d /= static_cast<float>(std::sqrt(norm));
  // Along z = s * dir every distance |z - mu_j| grows once s exceeds dir . mu_j.
  double start = 0;
  for (int j = 0; j < 2; ++j) {
    double p = 0;
    for (int i = 0; i < 32; ++i) p += dir[static_cast<std::size_t>(i)] * means[static_cast<std::size_t>(j * 32 + i)];
    start = std::max(start, p);
  }
  double prev = -1e300;
  for (int k = 0; k < 20; ++k) {
    const float s = static_cast<float>(start) + 0.25f * static_cast<float>(k);
    std::vector<float> z(32);
    for (int i = 0; i < 32; ++i) z[static_cast<std::size_t>(i)] = s * dir[static_cast<std::size_t>(i)];
    const double v = mdn_nll(o, z);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("mdn_select") {
  Rng rng(6);
  auto mu = randn(32, rng);
  const MdnOutput one = make_mdn_output({0.0f}, mu, {0.0f});
  CHECK(mdn_select(one, SelectMode::Mode) == mu);
  const MdnOutput tight = make_mdn_output({0.0f, 0.0f}, [&] {
    auto m = mu;
    m.insert(m.end(), mu.begin(), mu.end());
    return m;
  }(), {-200.0f, -200.0f});
  CHECK(mdn_select(tight, SelectMode::Sample, &rng) == mu);
  CHECK_THROWS_AS(mdn_select(one, SelectMode::Sample), ContractError);

  auto means = randn(64, rng);
  const MdnOutput skew = make_mdn_output({std::log(0.99f), std::log(0.01f)}, means, {-200.0f, -200.0f});
  int first = 0;
  const auto m0 = skew.mean(0);
  for (int k = 0; k < 10000; ++k) first += mdn_select(skew, SelectMode::Sample, &rng) == m0;
  CHECK(first >= 9700);
}

TEST_CASE("MDN loss gradient matches finite differences") {
  Rng rng(7);
  for (int k : {1, 3, 5}) {
    for (int trial = 0; trial < 3; ++trial) {
      Parameter logits("logits", Tensor({2, k}, randn(static_cast<std::size_t>(2 * k), rng)));
      Parameter means("means", Tensor({2, k * 32}, randn(static_cast<std::size_t>(2 * k * 32), rng)));
      Parameter ls("ls", Tensor({2, k}, randn(static_cast<std::size_t>(2 * k), rng, 0.3f)));
      Tensor target({2, 32}, randn(64, rng));
      auto r = finite_diff_check(
          [&](Tape& t) { return mdn_nll_terms(t.param(logits), t.param(means), t.param(ls), target); },
          {&logits, &means, &ls}, 1e-3f, static_cast<unsigned long long>(trial));
      CHECK(r.max_rel_error < 1e-2);
    }
  }
}

TEST_CASE("interpolate arity") {
  Rng rng(8);
  MdnLstm m(small_config(), rng);
  auto z = randn(32, rng);
  CHECK(interpolate(m, m.initial_hidden(), z, {}).empty());
  auto out = interpolate(m, m.initial_hidden(), z, {Action(1, 0), Action(0.5, 0.5), Action(0, 0)});
  CHECK(out.size() == 3);
  // Each prediction is the mode of its step.
  auto [h1, o1] = m.mdn_step(m.initial_hidden(), z, Action(1, 0));
  CHECK(out[0] == mdn_select(o1, SelectMode::Mode));
}

TEST_CASE("train_memory learns action-conditioned dynamics") {
  auto train = synthetic_sequences(64, 40, 1);
  auto held = synthetic_sequences(16, 40, 2);
  MemoryConfig cfg = small_config();
  cfg.epochs = 25;
  cfg.lr = 3e-3f;
  MemoryCurve curve;
  MdnLstm m = train_memory(train, cfg, 0, &curve);
  CHECK(curve.epoch_nll.back() < curve.epoch_nll.front());
  const double model_nll = evaluate_memory_nll(m, held);
  const double copy_nll = CopyLastBaseline::fit(train).nll(held);
  MESSAGE("held-out NLL: model " << model_nll << ", copy-last " << copy_nll);
  CHECK(model_nll < copy_nll);
}

TEST_CASE("train_memory determinism and degenerate input") {
  auto data = synthetic_sequences(8, 12, 3);
  MemoryConfig cfg = small_config();
  cfg.epochs = 2;
  auto a = train_memory(data, cfg, 5).state(), b = train_memory(data, cfg, 5).state();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second == b[i].second);

  std::vector<LatentSequence> mixed = data;
  mixed.push_back({Tensor({1, 32}), {Action()}});
  MemoryCurve curve;
  train_memory(mixed, cfg, 5, &curve);
  CHECK(curve.skipped == 1);
  CHECK_THROWS_AS(train_memory({LatentSequence{Tensor({1, 32}), {Action()}}}, cfg, 5), ContractError);
}

TEST_CASE("copy-last baseline oracle") {
  // Residuals of +1 and +3 in every dimension: mean 2, variance 1.
  LatentSequence s{Tensor({3, 32}), {Action(), Action(), Action()}};
  for (int i = 0; i < 32; ++i) s.latents[static_cast<std::size_t>(32 + i)] = 1, s.latents[static_cast<std::size_t>(64 + i)] = 4;
  auto b = CopyLastBaseline::fit({s});
  CHECK(b.mean_residual[0] == doctest::Approx(2.0));
  CHECK(b.variance == doctest::Approx(1.0));
  CHECK(b.nll({s}) == doctest::Approx(0.5 * 32 + 16 * kLog2Pi));
}

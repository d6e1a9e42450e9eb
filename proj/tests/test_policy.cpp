#include <cmath>

#include "doctest.h"
#include "wmnav/error.hpp"
#include "wmnav/gradcheck.hpp"
#include "wmnav/policy.hpp"

using namespace wmnav;

namespace {

std::vector<float> randn(std::size_t n, Rng& rng, float s = 1.0f) {
  std::normal_distribution<float> d(0.0f, s);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

const LatentSource kZeroLatent = [](const TileMap&, const RobotPose&) { return std::vector<float>(32, 0.0f); };

// Direct evaluation of A_t = sum_l (gamma lambda)^l delta_{t+l}, truncated at episode ends.
std::vector<double> gae_oracle(const std::vector<float>& r, const std::vector<float>& v, const std::vector<std::uint8_t>& d,
                               double g, double l, double last) {
  const std::size_t n = r.size();
  std::vector<double> delta(n), out(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double nv = d[t] ? 0.0 : (t + 1 < n ? v[t + 1] : last);
    delta[t] = r[t] + g * nv - v[t];
  }
  for (std::size_t t = 0; t < n; ++t) {
    double a = 0, w = 1;
    for (std::size_t k = t; k < n; ++k) {
      a += w * delta[k];
      if (d[k]) break;
      w *= g * l;
    }
    out[t] = a;
  }
  return out;
}

}  // namespace

TEST_CASE("act keeps actions in range and is deterministic without rng") {
  Rng rng(1);
  PpoConfig cfg;
  PolicyNet net(35, cfg, rng);
  net.log_std().value.fill(1.5f);
  for (int k = 0; k < 500; ++k) {
    auto s = randn(35, rng, k < 250 ? 1.0f : 50.0f);
    auto a = net.act(s, &rng);
    CHECK(std::abs(a.action.throttle) <= 1.0f);
    CHECK(std::abs(a.action.steer) <= 1.0f);
    CHECK(std::isfinite(a.log_prob));
    auto d1 = net.act(s, nullptr), d2 = net.act(s, nullptr);
    CHECK(d1.action.throttle == d2.action.throttle);
    CHECK(d1.action.steer == d2.action.steer);
  }
  CHECK_THROWS_AS(net.act(std::vector<float>(34, 0.0f), nullptr), ContractError);
}

TEST_CASE("squashed log-density agrees with a quadrature oracle") {
  // Probability mass of a = tanh(u) in [a0 - h, a0 + h] divided by 2h, on a 1-D slice
  // (steer fixed at its mean, so that dimension contributes its known peak density).
  const std::array<float, 2> mean{0.3f, -0.2f}, ls{-0.4f, 0.1f};
  const double s0 = std::exp(ls[0]);
  for (double a0 : {-0.9, -0.5, 0.0, 0.4, 0.8}) {
    constexpr double h = 1e-3;
    constexpr int kSteps = 2000;
    double mass = 0;
    for (int i = 0; i < kSteps; ++i) {
      const double a = a0 - h + (i + 0.5) * (2 * h / kSteps);
      const double u = std::atanh(a);
      const double z = (u - mean[0]) / s0;
      mass += std::exp(-0.5 * z * z) / (s0 * std::sqrt(2 * kPi)) / (1 - a * a) * (2 * h / kSteps);
    }
    const double steer_term = -ls[1] - 0.5 * std::log(2 * kPi) - std::log(1 - std::pow(std::tanh(mean[1]), 2));
    const double oracle = std::log(mass / (2 * h)) + steer_term;
    const double lp = squashed_log_prob({static_cast<float>(std::atanh(a0)), mean[1]}, mean, ls);
    CHECK(std::abs(lp - oracle) < 1e-3);
  }
}

TEST_CASE("compute_gae") {
  auto one = compute_gae({2.0f}, {0.5f}, {1}, 0.99f, 0.95f);
  CHECK(one.advantages[0] == doctest::Approx(1.5));
  CHECK(one.returns[0] == doctest::Approx(2.0));

  auto rtg = compute_gae({1, 2, 3, 4}, {0, 0, 0, 0}, {0, 0, 0, 1}, 1.0f, 1.0f);
  CHECK(rtg.advantages == std::vector<float>{10, 9, 7, 4});

  Rng rng(2);
  std::uniform_real_distribution<float> u(-1, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = trial == 0 ? 10 : 1 + rng() % 30;
    std::vector<float> r(n), v(n);
    std::vector<std::uint8_t> d(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = u(rng), v[i] = u(rng), d[i] = rng() % 5 == 0;
    const float g = 0.5f + 0.5f * std::abs(u(rng)), l = 0.5f + 0.5f * std::abs(u(rng)), last = u(rng);
    auto res = compute_gae(r, v, d, g, l, last);
    auto oracle = gae_oracle(r, v, d, g, l, last);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(res.advantages[i] - oracle[i]) < 1e-5);
      CHECK(res.returns[i] == doctest::Approx(res.advantages[i] + v[i]));
    }
  }
  CHECK_THROWS_AS(compute_gae({1, 2}, {0}, {0, 0}, 0.9f, 0.9f), ContractError);
}

TEST_CASE("clipped surrogate direct evaluation") {
  auto surrogate = [](float ratio, float adv) {
    Tape t;
    Var lp = t.constant(Tensor({1}, std::log(ratio)));
    return clipped_surrogate(lp, Tensor({1}, 0.0f), Tensor({1}, adv), 0.2f).item();
  };
  CHECK(surrogate(2.0f, 1.0f) == doctest::Approx(1.2f));
  CHECK(surrogate(0.5f, -1.0f) == doctest::Approx(-0.8f));
  Tape t;
  Tensor lp({4}, std::vector<float>{0.1f, -0.3f, 0.7f, 0.0f});
  Tensor adv({4}, std::vector<float>{1.0f, -2.0f, 0.5f, 3.0f});
  CHECK(clipped_surrogate(t.constant(lp), lp, adv, 0.2f).item() == doctest::Approx(2.5 / 4.0));
}

TEST_CASE("zero advantages give a zero surrogate gradient") {
  Rng rng(3);
  PpoConfig cfg;
  PolicyNet net(35, cfg, rng);
  Tensor states({8, 35}, randn(8 * 35, rng)), u({8, 2}, randn(16, rng));
  auto grads = compute_gradients(
      [&](Tape& t) {
        Var lp = gaussian_log_prob(net.actor_mean(t, t.constant(states)), t.param(net.log_std()), u);
        return clipped_surrogate(lp, Tensor({8}, -1.0f), Tensor({8}), 0.2f);
      },
      net.parameters());
  for (const auto& g : grads)
    for (float v : g.vec()) CHECK(v == 0.0f);
}

TEST_CASE("PPO loss gradient matches finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Parameter mean("mean", Tensor({6, 2}, randn(12, rng, 0.5f)));
    Parameter ls("ls", Tensor({2}, randn(2, rng, 0.3f)));
    Parameter values("values", Tensor({6}, randn(6, rng)));
    Tensor u({6, 2}, randn(12, rng)), old({6}, randn(6, rng, 0.3f)), adv({6}, randn(6, rng)), ret({6}, randn(6, rng));
    // Centre the old log-probs on the current ones so ratios stay near the clip window.
    {
      Tape t;
      Var lp = gaussian_log_prob(t.param(mean), t.param(ls), u);
      for (int i = 0; i < 6; ++i) old[static_cast<std::size_t>(i)] = lp.value()[static_cast<std::size_t>(i)] + 0.05f * old[static_cast<std::size_t>(i)];
    }
    auto r = finite_diff_check(
        [&](Tape& t) {
          Var l = t.param(ls);
          Var surr = clipped_surrogate(gaussian_log_prob(t.param(mean), l, u), old, adv, 0.2f);
          Var vloss = ad::mean(ad::square(ad::sub(t.param(values), t.constant(ret))));
          return ad::sub(ad::add(ad::scale(surr, -1.0f), ad::scale(vloss, 0.5f)), ad::scale(ad::sum(l), 0.01f));
        },
        {&mean, &ls, &values}, 1e-3f, static_cast<unsigned long long>(trial));
    CHECK(r.max_rel_error < 1e-2);
  }
}

TEST_CASE("reward rules") {
  PpoConfig cfg;
  cfg.step_penalty = 0.0f;
  CHECK(reward_fn({3, false, false}, cfg) == 3.0f);
  cfg.step_penalty = 0.05f;
  CHECK(reward_fn({0, false, false}, cfg) == -0.05f);
  CHECK(reward_fn({0, true, false}, cfg) == doctest::Approx(-0.05f - cfg.collision_penalty));

  cfg.waypoint_threshold_m = 1.0;
  Rng rng(5);
  NavEnv env(kZeroLatent, cfg);
  env.reset(corridor_task(20, 4, rng));
  auto st = env.step(Action(0, 0));
  CHECK(st.reward == -0.05f);
  CHECK_FALSE(st.done);

  // A wide arc leaves the 5 m road.
  env.reset(corridor_task(20, 4, rng));
  NavEnv::Step last;
  for (int k = 0; k < 200 && !last.done; ++k) last = env.step(Action(1, 0.3));
  CHECK(last.done);
  CHECK(last.outcome == Outcome::Collision);
  CHECK(last.transition.collision);
}

TEST_CASE("zero throttle times out with no waypoints") {
  PpoConfig cfg;
  cfg.timeout = 50;
  Rng rng(6);
  NavEnv env(kZeroLatent, cfg);
  env.reset(corridor_task(20, 1, rng));
  NavEnv::Step st;
  while (!st.done) st = env.step(Action(0, 0.3));
  CHECK(st.outcome == Outcome::Timeout);
  CHECK(env.waypoints_reached() == 0);
  CHECK(env.steps() == 50);
}

TEST_CASE("waypoints inside the radius at spawn are not part of the course") {
  PpoConfig cfg;  // threshold 5 m
  Rng rng(21);
  NavTask task = corridor_task(24, 1, rng);
  NavEnv env(kZeroLatent, cfg);
  env.reset(task);
  REQUIRE(!env.task().waypoints.empty());
  CHECK(env.task().waypoints.size() < task.waypoints.size());
  CHECK(env.task().waypoints.back().y == task.waypoints.back().y);
  for (const Point2& p : env.task().waypoints)
    CHECK(std::hypot(p.x - task.start.x, p.y - task.start.y) > cfg.waypoint_threshold_m);
  CHECK(env.step(Action(0, 0)).transition.new_waypoints == 0);

  NavTask tiny = corridor_task(3, 1, rng);
  CHECK_THROWS_AS(env.reset(tiny), ContractError);
}

TEST_CASE("waypoint reward accounting over random episodes") {
  PpoConfig cfg;
  cfg.waypoint_threshold_m = 2.0;
  cfg.timeout = 300;
  Rng rng(7);
  NavEnv env(kZeroLatent, cfg);
  std::uniform_real_distribution<float> u(-0.2f, 1.0f);
  for (int ep = 0; ep < 30; ++ep) {
    env.reset(corridor_task(15, 1, rng));
    int reached = 0;
    NavEnv::Step st;
    while (!st.done) {
      st = env.step(Action(u(rng), 0.2f * (u(rng) - 0.4f)));
      reached += st.transition.new_waypoints;
    }
    CHECK(reached == env.waypoints_reached());
    CHECK(reached * cfg.waypoint_reward == doctest::Approx(static_cast<float>(env.waypoints_reached())));
  }
}

TEST_CASE("goal vector") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int k = 0; k < 1000; ++k) {
    RobotPose p{u(rng), u(rng), u(rng)};
    auto g = goal_vector(p, {u(rng), u(rng)}, 5.0);
    CHECK(std::abs(std::hypot(g[0], g[1]) - 1.0) < 1e-5);
    CHECK(g[2] >= 0.0f);
  }
  auto ahead = goal_vector({0, 0, kPi / 2}, {0, 10}, 5.0);
  CHECK(ahead[0] == doctest::Approx(1.0f));
  CHECK(ahead[2] == doctest::Approx(2.0f));
  auto left = goal_vector({0, 0, 0}, {0, 3}, 1.0);
  CHECK(left[1] == doctest::Approx(1.0f));
}

TEST_CASE("ppo_update contracts and train_policy determinism") {
  PpoConfig cfg;
  cfg.rollout = 128;
  cfg.minibatch = 32;
  cfg.epochs = 2;
  Rng rng(9);
  PolicyNet net(35, cfg, rng);
  OptimState opt;
  CHECK_THROWS_AS(ppo_update(net, RolloutBuffer{}, cfg, opt, rng), ContractError);

  TaskSampler tasks = [](Rng& r) { return corridor_task(16, 8, r); };
  auto a = train_policy(tasks, kZeroLatent, cfg, 3, 600);
  auto b = train_policy(tasks, kZeroLatent, cfg, 3, 600);
  CHECK(a.steps == 600);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].step == b.curve[i].step);
    CHECK(a.curve[i].reward == b.curve[i].reward);
  }
  auto sa = a.net.state(), sb = b.net.state();
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].second == sb[i].second);
}

TEST_CASE("milestone detection") {
  std::vector<CurveRow> c;
  for (int i = 0; i < 30; ++i) c.push_back({100L * (i + 1), i, 0.0, 0, i >= 10});
  CHECK(steps_to_milestone(c, 10, 0.8) == 1800);
  CHECK(steps_to_milestone(c, 40, 0.8) == -1);
}

#include "wmnav/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>

#include "wmnav/error.hpp"

namespace wmnav {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Tensor stack_rows(const std::vector<std::vector<float>>& rows, const std::vector<std::size_t>& idx) {
  const int cols = static_cast<int>(rows[idx[0]].size());
  Tensor t({static_cast<int>(idx.size()), cols});
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(rows[idx[i]].begin(), rows[idx[i]].end(), t.data() + i * cols);
  return t;
}

}  // namespace

void PpoConfig::validate() const {
  WMNAV_REQUIRE(clip > 0 && clip < 1, "ppo: clip must lie in (0,1)");
  WMNAV_REQUIRE(gamma > 0 && gamma <= 1 && lambda > 0 && lambda <= 1, "ppo: gamma and lambda must lie in (0,1]");
  WMNAV_REQUIRE(epochs > 0 && minibatch > 0 && rollout > 0 && timeout > 0, "ppo: counts must be positive");
  WMNAV_REQUIRE(waypoint_threshold_m > 0 && waypoint_resolution_m > 0, "ppo: waypoint threshold and resolution must be positive");
}

std::array<float, kGoalDim> goal_vector(const RobotPose& pose, Point2 wp, double threshold_m) {
  const double dx = wp.x - pose.x, dy = wp.y - pose.y;
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  const double fwd = c * dx + s * dy, left = -s * dx + c * dy;
  const double d = std::hypot(fwd, left);
  if (d == 0) return {1.0f, 0.0f, 0.0f};
  return {static_cast<float>(fwd / d), static_cast<float>(left / d), static_cast<float>(d / threshold_m)};
}

PolicyNet::PolicyNet(int state_dim, const PpoConfig& cfg, Rng& rng) : state_dim_(state_dim), hidden_(cfg.hidden) {
  a1_ = nn::Linear("pi.a1", state_dim, cfg.hidden, rng, 0.7f);
  a2_ = nn::Linear("pi.a2", cfg.hidden, cfg.hidden, rng, 0.7f);
  a3_ = nn::Linear("pi.a3", cfg.hidden, kActionDim, rng, 0.01f);
  c1_ = nn::Linear("pi.c1", state_dim, cfg.hidden, rng, 0.7f);
  c2_ = nn::Linear("pi.c2", cfg.hidden, cfg.hidden, rng, 0.7f);
  c3_ = nn::Linear("pi.c3", cfg.hidden, 1, rng, 0.5f);
  log_std_ = Parameter("pi.log_std", Tensor({kActionDim}, cfg.init_log_std));
}

std::vector<Parameter*> PolicyNet::parameters() {
  std::vector<Parameter*> out;
  a1_.collect(out), a2_.collect(out), a3_.collect(out);
  c1_.collect(out), c2_.collect(out), c3_.collect(out);
  out.push_back(&log_std_);
  return out;
}

Var PolicyNet::actor_mean(Tape& t, Var x) {
  WMNAV_REQUIRE(x.shape().size() == 2 && x.shape()[1] == state_dim_, "policy: state width mismatch");
  return a3_(t, ad::tanh(a2_(t, ad::tanh(a1_(t, x)))));
}

Var PolicyNet::critic(Tape& t, Var x) {
  WMNAV_REQUIRE(x.shape().size() == 2 && x.shape()[1] == state_dim_, "critic: state width mismatch");
  const int n = x.shape()[0];
  return ad::reshape(c3_(t, ad::tanh(c2_(t, ad::tanh(c1_(t, x))))), {n});
}

double squashed_log_prob(const std::array<float, kActionDim>& u, const std::array<float, kActionDim>& mean,
                         const std::array<float, kActionDim>& log_std) {
  double lp = 0;
  for (int d = 0; d < kActionDim; ++d) {
    const double z = (static_cast<double>(u[static_cast<std::size_t>(d)]) - mean[static_cast<std::size_t>(d)]) * std::exp(-static_cast<double>(log_std[static_cast<std::size_t>(d)]));
    const double a = std::tanh(static_cast<double>(u[static_cast<std::size_t>(d)]));
    lp += -0.5 * z * z - log_std[static_cast<std::size_t>(d)] - 0.5 * kLog2Pi - std::log(std::max(1.0 - a * a, 1e-12));
  }
  return lp;
}

ActResult PolicyNet::act(const std::vector<float>& state, Rng* rng) {
  WMNAV_REQUIRE(state.size() == static_cast<std::size_t>(state_dim_), "act: state width mismatch");
  for (float v : state) WMNAV_REQUIRE(std::isfinite(v), "act: non-finite state");
  Tape t;
  Var x = t.constant(Tensor({1, state_dim_}, state));
  const Tensor mean = actor_mean(t, x).value();
  ActResult r;
  r.value = critic(t, x).item();
  std::array<float, kActionDim> m{}, ls{};
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int d = 0; d < kActionDim; ++d) {
    m[static_cast<std::size_t>(d)] = mean[static_cast<std::size_t>(d)];
    ls[static_cast<std::size_t>(d)] = log_std_.value[static_cast<std::size_t>(d)];
    r.pre_tanh[static_cast<std::size_t>(d)] = m[static_cast<std::size_t>(d)] + (rng ? std::exp(ls[static_cast<std::size_t>(d)]) * n(*rng) : 0.0f);
  }
  r.action = Action(std::tanh(r.pre_tanh[0]), std::tanh(r.pre_tanh[1]));
  r.log_prob = static_cast<float>(squashed_log_prob(r.pre_tanh, m, ls));
  return r;
}

NamedTensors PolicyNet::state() {
  NamedTensors s = snapshot(parameters());
  s.emplace_back("pi.config", Tensor({2}, std::vector<float>{static_cast<float>(state_dim_), static_cast<float>(hidden_)}));
  return s;
}

void PolicyNet::load(const NamedTensors& tensors) {
  const Tensor& c = find_tensor(tensors, "pi.config");
  if (c.size() != 2) throw IntegrityError("tensor 'pi.config' has the wrong length");
  PpoConfig cfg;
  cfg.hidden = static_cast<int>(c[1]);
  Rng rng(0);
  *this = PolicyNet(static_cast<int>(c[0]), cfg, rng);
  restore(tensors, parameters());
}

void RolloutBuffer::clear() { *this = RolloutBuffer{}; }

void RolloutBuffer::validate() const {
  const std::size_t n = rewards.size();
  WMNAV_REQUIRE(states.size() == n && pre_tanh.size() == n && log_probs.size() == n && values.size() == n &&
                    dones.size() == n,
                "rollout buffer: misaligned lengths");
  for (float r : rewards) WMNAV_REQUIRE(std::isfinite(r), "rollout buffer: non-finite reward");
}

GaeResult compute_gae(const std::vector<float>& rewards, const std::vector<float>& values,
                      const std::vector<std::uint8_t>& dones, float gamma, float lambda, float last_value) {
  const std::size_t n = rewards.size();
  WMNAV_REQUIRE(values.size() == n && dones.size() == n, "compute_gae: length mismatch");
  GaeResult r;
  r.advantages.assign(n, 0.0f);
  r.returns.assign(n, 0.0f);
  double gae = 0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_value = k + 1 < n ? values[k + 1] : last_value;
    const double nonterminal = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * nonterminal - values[k];
    gae = delta + gamma * lambda * nonterminal * gae;
    r.advantages[k] = static_cast<float>(gae);
    r.returns[k] = static_cast<float>(gae + values[k]);
  }
  return r;
}

Var gaussian_log_prob(Var mean, Var log_std, const Tensor& u) {
  const int n = mean.shape()[0], d = mean.shape()[1];
  WMNAV_REQUIRE(u.shape() == mean.shape() && log_std.value().size() == static_cast<std::size_t>(d),
                "gaussian_log_prob: shape mismatch");
  Tape& t = *mean.tape;
  Var ls = ad::matmul(t.constant(Tensor({n, 1}, 1.0f)), ad::reshape(log_std, {1, d}));
  Var z = ad::mul(ad::sub(t.constant(u), mean), ad::exp(ad::scale(ls, -1.0f)));
  Var quad = ad::scale(ad::sum_rows(ad::square(z)), -0.5f);
  return ad::add_scalar(ad::sub(quad, ad::sum_rows(ls)), static_cast<float>(-0.5 * d * kLog2Pi));
}

Var clipped_surrogate(Var new_lp, const Tensor& old_lp, const Tensor& adv, float clip) {
  Tape& t = *new_lp.tape;
  Var ratio = ad::exp(ad::sub(new_lp, t.constant(old_lp)));
  Var a = t.constant(adv);
  return ad::mean(ad::minimum(ad::mul(ratio, a), ad::mul(ad::clamp(ratio, 1.0f - clip, 1.0f + clip), a)));
}

PpoStats ppo_update(PolicyNet& net, const RolloutBuffer& buf, const PpoConfig& cfg, OptimState& opt, Rng& rng) {
  WMNAV_REQUIRE(buf.size() > 0, "ppo_update: empty buffer");
  buf.validate();
  const GaeResult gae = compute_gae(buf.rewards, buf.values, buf.dones, cfg.gamma, cfg.lambda, buf.last_value);
  const std::size_t n = buf.size();
  double mean = 0, var = 0;
  for (float a : gae.advantages) mean += a;
  mean /= static_cast<double>(n);
  for (float a : gae.advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(n)) + 1e-8;
  std::vector<float> adv(n);
  for (std::size_t i = 0; i < n; ++i) adv[i] = static_cast<float>((gae.advantages[i] - mean) / sd);

  auto params = net.parameters();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  PpoStats stats;
  int batches = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.minibatch)) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + static_cast<std::size_t>(cfg.minibatch))));
      const int m = static_cast<int>(idx.size());
      Tensor u({m, kActionDim}), old_lp({m}), a({m}), ret({m});
      for (int i = 0; i < m; ++i) {
        const std::size_t k = idx[static_cast<std::size_t>(i)];
        u[static_cast<std::size_t>(2 * i)] = buf.pre_tanh[k][0];
        u[static_cast<std::size_t>(2 * i + 1)] = buf.pre_tanh[k][1];
        // The tanh Jacobian does not depend on the parameters; drop it from the ratio.
        double jac = 0;
        for (float p : buf.pre_tanh[k]) jac += std::log(std::max(1.0 - std::pow(std::tanh(static_cast<double>(p)), 2), 1e-12));
        old_lp[static_cast<std::size_t>(i)] = static_cast<float>(buf.log_probs[k] + jac);
        a[static_cast<std::size_t>(i)] = adv[k];
        ret[static_cast<std::size_t>(i)] = gae.returns[k];
      }
      nn::zero_grads(params);
      Tape t;
      Var x = t.constant(stack_rows(buf.states, idx));
      Var ls = t.param(net.log_std());
      Var lp = gaussian_log_prob(net.actor_mean(t, x), ls, u);
      Var surr = clipped_surrogate(lp, old_lp, a, cfg.clip);
      Var vloss = ad::mean(ad::square(ad::sub(net.critic(t, x), t.constant(ret))));
      Var entropy = ad::add_scalar(ad::sum(ls), static_cast<float>(kActionDim * 0.5 * (1.0 + kLog2Pi)));
      Var loss = ad::sub(ad::add(ad::scale(surr, -1.0f), ad::scale(vloss, cfg.value_coef)), ad::scale(entropy, cfg.entropy_coef));
      t.backward(loss, "ppo loss");
      if (cfg.max_grad_norm > 0) nn::clip_grad_norm(params, cfg.max_grad_norm);
      adam_step(params, opt);
      stats.surrogate += surr.item();
      stats.value_loss += vloss.item();
      stats.entropy += entropy.item();
      ++batches;
    }
  }
  stats.surrogate /= batches, stats.value_loss /= batches, stats.entropy /= batches;
  return stats;
}

float reward_fn(const Transition& tr, const PpoConfig& cfg) {
  float r = cfg.waypoint_reward * static_cast<float>(tr.new_waypoints) - cfg.step_penalty;
  if (tr.collision) r -= cfg.collision_penalty;
  return r;
}

NavTask corridor_task(double length_m, double resolution_m, Rng& rng) {
  constexpr double kTile = 15.0;
  const int tiles = static_cast<int>(std::ceil((length_m + 30.0) / kTile)) + 2;
  NavTask task{TileMap(1, tiles), {}, {}};
  task.map.set(0, 0, Tile::from_arms(kNorth));
  for (int j = 1; j + 1 < tiles; ++j) task.map.set(0, j, Tile::from_arms(kNorth | kSouth));
  task.map.set(0, tiles - 1, Tile::from_arms(kSouth));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  task.start = {7.5 + 0.5 * u(rng), 22.5 + 0.5 * u(rng), kPi / 2 + 10.0 * kPi / 180.0 * u(rng)};
  task.waypoints = make_waypoints(task.map, {task.start.x, task.start.y}, {7.5, task.start.y + length_m}, resolution_m);
  return task;
}

std::string outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Running: return "running";
    case Outcome::Success: return "success";
    case Outcome::Collision: return "collision";
    case Outcome::Timeout: return "timeout";
  }
  return "?";
}

NavEnv::NavEnv(LatentSource latent, const PpoConfig& cfg, DriveLimits limits, double dt)
    : latent_(std::move(latent)), cfg_(cfg), limits_(limits), dt_(dt) {
  cfg.validate();
}

std::vector<float> NavEnv::observe() const {
  std::vector<float> s = latent_(task_.map, pose_);
  WMNAV_REQUIRE(s.size() == 32, "latent source must return 32 values");
  const std::size_t wp = std::min(static_cast<std::size_t>(next_), task_.waypoints.size() - 1);
  const auto g = goal_vector(pose_, task_.waypoints[wp], cfg_.waypoint_threshold_m);
  s.insert(s.end(), g.begin(), g.end());
  return s;
}

std::vector<float> NavEnv::reset(NavTask task) {
  WMNAV_REQUIRE(!task.waypoints.empty(), "NavEnv: task has no waypoints");
  task_ = std::move(task);
  pose_ = task_.start;
  // Waypoints already inside the radius at spawn are never entered; they are not part of the course.
  auto& w = task_.waypoints;
  auto first = std::find_if(w.begin(), w.end(), [&](Point2 p) {
    return std::hypot(p.x - pose_.x, p.y - pose_.y) > cfg_.waypoint_threshold_m;
  });
  WMNAV_REQUIRE(first != w.end(), "NavEnv: every waypoint lies within the threshold of the start");
  w.erase(w.begin(), first);
  next_ = 0, steps_ = 0;
  return observe();
}

NavEnv::Step NavEnv::step(const Action& a) {
  WMNAV_REQUIRE(std::abs(a.throttle) <= 1.0f && std::abs(a.steer) <= 1.0f, "NavEnv: action outside [-1,1]^2");
  pose_ = step_dynamics(pose_, a, dt_, limits_);
  ++steps_;
  Step s;
  const int n = static_cast<int>(task_.waypoints.size());
  while (next_ < n && std::hypot(task_.waypoints[static_cast<std::size_t>(next_)].x - pose_.x,
                                 task_.waypoints[static_cast<std::size_t>(next_)].y - pose_.y) <= cfg_.waypoint_threshold_m) {
    ++next_;
    ++s.transition.new_waypoints;
  }
  s.transition.collision = curb_collision(task_.map, pose_);
  s.transition.success = next_ == n;
  s.reward = reward_fn(s.transition, cfg_);
  if (s.transition.collision) s.outcome = Outcome::Collision;
  else if (s.transition.success) s.outcome = Outcome::Success;
  else if (steps_ >= cfg_.timeout) s.outcome = Outcome::Timeout;
  s.done = s.outcome != Outcome::Running;
  s.state = observe();
  return s;
}

void write_curve_csv(const std::vector<CurveRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "step,episode,reward,waypoints,success\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%d,%.6f,%d,%d\n", r.step, r.episode, r.reward, r.waypoints, r.success ? 1 : 0);
    out << buf;
  }
}

TrainResult train_policy(const TaskSampler& tasks, const LatentSource& latent, const PpoConfig& cfg, std::uint64_t seed,
                         long max_steps, const StopHook& stop) {
  cfg.validate();
  Rng rng(seed);
  TrainResult res;
  res.net = PolicyNet(32 + kGoalDim, cfg, rng);
  OptimState opt;
  opt.lr = cfg.lr;
  NavEnv env(latent, cfg);
  std::vector<float> state = env.reset(tasks(rng));
  RolloutBuffer buf;
  double ep_reward = 0;
  int episode = 0;
  while (res.steps < max_steps) {
    buf.clear();
    bool last_done = false;
    for (int k = 0; k < cfg.rollout && res.steps < max_steps; ++k) {
      const ActResult a = res.net.act(state, &rng);
      const NavEnv::Step st = env.step(a.action);
      ++res.steps;
      buf.states.push_back(std::move(state));
      buf.pre_tanh.push_back(a.pre_tanh);
      buf.log_probs.push_back(a.log_prob);
      buf.values.push_back(a.value);
      buf.rewards.push_back(st.reward);
      buf.dones.push_back(st.done);
      ep_reward += st.reward;
      last_done = st.done;
      if (st.done) {
        res.curve.push_back({res.steps, episode++, ep_reward, env.waypoints_reached(), st.outcome == Outcome::Success});
        ep_reward = 0;
        state = env.reset(tasks(rng));
      } else {
        state = st.state;
      }
    }
    buf.last_value = last_done ? 0.0f : res.net.act(state, nullptr).value;
    ppo_update(res.net, buf, cfg, opt, rng);
    if (stop && stop(res.net, res.curve, res.steps)) break;
  }
  return res;
}

double evaluate_policy(PolicyNet& net, const TaskSampler& tasks, const LatentSource& latent, const PpoConfig& cfg,
                       int episodes, std::uint64_t seed) {
  WMNAV_REQUIRE(episodes > 0, "evaluate_policy: need at least one episode");
  Rng rng(seed);
  NavEnv env(latent, cfg);
  int wins = 0;
  for (int e = 0; e < episodes; ++e) {
    std::vector<float> state = env.reset(tasks(rng));
    for (;;) {
      const NavEnv::Step st = env.step(net.act(state, nullptr).action);
      if (st.done) {
        wins += st.outcome == Outcome::Success;
        break;
      }
      state = st.state;
    }
  }
  return static_cast<double>(wins) / episodes;
}

long steps_to_milestone(const std::vector<CurveRow>& curve, int window, double rate) {
  WMNAV_REQUIRE(window > 0, "steps_to_milestone: window must be positive");
  std::deque<bool> recent;
  int wins = 0;
  for (const auto& r : curve) {
    recent.push_back(r.success);
    wins += r.success;
    if (static_cast<int>(recent.size()) > window) wins -= recent.front(), recent.pop_front();
    if (static_cast<int>(recent.size()) == window && wins >= rate * window) return r.step;
  }
  return -1;
}

}  // namespace wmnav

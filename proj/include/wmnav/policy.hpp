#pragma once

// Goal-conditioned navigation policy trained with clipped-surrogate PPO.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wmnav/checkpoint.hpp"
#include "wmnav/optim.hpp"
#include "wmnav/world.hpp"

namespace wmnav {

inline constexpr int kGoalDim = 3;
inline constexpr int kActionDim = 2;

struct PpoConfig {
  float clip = 0.2f;
  float gamma = 0.99f;
  float lambda = 0.95f;
  int epochs = 10;
  int minibatch = 256;
  float entropy_coef = 0.01f;
  float value_coef = 0.5f;
  int rollout = 2048;
  float lr = 3e-4f;
  float max_grad_norm = 0.5f;
  int hidden = 64;
  float init_log_std = -0.5f;
  // Task and reward.
  double waypoint_threshold_m = 5.0;
  double waypoint_resolution_m = 1.0;
  float waypoint_reward = 1.0f;
  float step_penalty = 0.01f;
  float collision_penalty = 1.0f;
  int timeout = 500;
  void validate() const;
};

/// Egocentric unit direction (forward, left) to the waypoint and distance / threshold.
std::array<float, kGoalDim> goal_vector(const RobotPose& pose, Point2 waypoint, double threshold_m);

struct ActResult {
  Action action;
  std::array<float, kActionDim> pre_tanh{};
  float log_prob = 0;
  float value = 0;
};

class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(int state_dim, const PpoConfig& cfg, Rng& rng);

  int state_dim() const { return state_dim_; }
  std::vector<Parameter*> parameters();

  /// states [N,S] -> action means (pre-tanh) [N,2]
  Var actor_mean(Tape& t, Var states);
  /// states [N,S] -> values [N]
  Var critic(Tape& t, Var states);
  Parameter& log_std() { return log_std_; }

  /// Samples u ~ N(mean, std), returns tanh(u). With rng == nullptr the mean is used.
  ActResult act(const std::vector<float>& state, Rng* rng);

  NamedTensors state();
  void load(const NamedTensors& tensors);

 private:
  int state_dim_ = 0, hidden_ = 0;
  nn::Linear a1_, a2_, a3_, c1_, c2_, c3_;
  Parameter log_std_;
};

/// Log-density of tanh(u) under the squashed diagonal Gaussian.
double squashed_log_prob(const std::array<float, kActionDim>& u, const std::array<float, kActionDim>& mean,
                         const std::array<float, kActionDim>& log_std);

struct RolloutBuffer {
  std::vector<std::vector<float>> states;
  std::vector<std::array<float, kActionDim>> pre_tanh;
  std::vector<float> log_probs, values, rewards;
  std::vector<std::uint8_t> dones;
  /// Bootstrap value of the state after the last stored step (0 if that step ended an episode).
  float last_value = 0;
  std::size_t size() const { return rewards.size(); }
  void clear();
  void validate() const;
};

struct GaeResult {
  std::vector<float> advantages, returns;
};

/// Generalised advantage estimation. `dones[t]` marks that step t ended an
/// episode; `last_value` bootstraps the step after the final one.
GaeResult compute_gae(const std::vector<float>& rewards, const std::vector<float>& values,
                      const std::vector<std::uint8_t>& dones, float gamma, float lambda, float last_value = 0.0f);

/// Mean over rows of min(r A, clip(r, 1-eps, 1+eps) A) with r = exp(new - old).
Var clipped_surrogate(Var new_log_prob, const Tensor& old_log_prob, const Tensor& advantages, float clip);
/// Gaussian log-density of u rows under (mean [N,2], log_std [2]), without the tanh term.
Var gaussian_log_prob(Var mean, Var log_std, const Tensor& u);

struct PpoStats {
  double surrogate = 0, value_loss = 0, entropy = 0;
};

/// Advantages are normalised per batch; minimises -surrogate + c_v * value
/// loss - c_e * entropy over cfg.epochs passes of shuffled minibatches.
PpoStats ppo_update(PolicyNet& net, const RolloutBuffer& buffer, const PpoConfig& cfg, OptimState& opt, Rng& rng);

struct Transition {
  int new_waypoints = 0;
  bool collision = false;
  bool success = false;
};
float reward_fn(const Transition& tr, const PpoConfig& cfg);

/// Produces the 32-dim latent for a pose.
using LatentSource = std::function<std::vector<float>(const TileMap&, const RobotPose&)>;

struct NavTask {
  TileMap map{1, 1};
  RobotPose start;
  std::vector<Point2> waypoints;
};

/// Straight north-south corridor; the goal lies `length_m` ahead of a jittered start.
NavTask corridor_task(double length_m, double resolution_m, Rng& rng);

enum class Outcome : std::uint8_t { Running, Success, Collision, Timeout };
std::string outcome_name(Outcome o);

class NavEnv {
 public:
  NavEnv(LatentSource latent, const PpoConfig& cfg, DriveLimits limits = {}, double dt = 0.1);

  /// Returns the initial state vector.
  std::vector<float> reset(NavTask task);
  struct Step {
    std::vector<float> state;
    float reward = 0;
    bool done = false;
    Outcome outcome = Outcome::Running;
    Transition transition;
  };
  Step step(const Action& a);

  const RobotPose& pose() const { return pose_; }
  const NavTask& task() const { return task_; }
  int waypoints_reached() const { return next_; }
  int steps() const { return steps_; }
  std::vector<float> observe() const;

 private:
  LatentSource latent_;
  PpoConfig cfg_;
  DriveLimits limits_;
  double dt_;
  NavTask task_;
  RobotPose pose_;
  int next_ = 0, steps_ = 0;
};

struct CurveRow {
  long step = 0;
  int episode = 0;
  double reward = 0;
  int waypoints = 0;
  bool success = false;
};

void write_curve_csv(const std::vector<CurveRow>& rows, const std::filesystem::path& path);

using TaskSampler = std::function<NavTask(Rng&)>;
/// Called after every update with the curve and total env steps so far; return true to stop.
using StopHook = std::function<bool(PolicyNet&, const std::vector<CurveRow>&, long)>;

struct TrainResult {
  PolicyNet net;
  std::vector<CurveRow> curve;
  long steps = 0;
};

TrainResult train_policy(const TaskSampler& tasks, const LatentSource& latent, const PpoConfig& cfg, std::uint64_t seed,
                         long max_steps, const StopHook& stop = {});

/// Deterministic-policy success rate over `episodes` sampled tasks.
double evaluate_policy(PolicyNet& net, const TaskSampler& tasks, const LatentSource& latent, const PpoConfig& cfg,
                       int episodes, std::uint64_t seed);

/// First env step at which the success rate over the trailing `window`
/// episodes reaches `rate`; -1 if never.
long steps_to_milestone(const std::vector<CurveRow>& curve, int window = 20, double rate = 0.8);

}  // namespace wmnav

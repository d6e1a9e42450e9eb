// Acceptance run. Prints one "criterion N: PASS|FAIL" line per criterion plus
// supplementary "check:" lines, and exits non-zero when any criterion fails.
//
//   acceptance [--ws DIR] [--reuse] [N ...]
//
// Without numbers every criterion runs. --reuse keeps data and checkpoints
// already present in the workspace instead of regenerating them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "wmnav/checkpoint.hpp"
#include "wmnav/commands.hpp"
#include "wmnav/error.hpp"

using namespace wmnav;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::map<int, std::pair<bool, std::string>> g_results;

void report(int id, bool pass, const std::string& detail) {
  g_results[id] = {pass, detail};
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

void check_line(const std::string& s) {
  std::printf("check: %s\n", s.c_str());
  std::fflush(stdout);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Env {
  fs::path ws;
  bool reuse = false;
  std::set<std::string> done;  // preparation steps already run in this process

  CommandContext ctx(std::uint64_t seed = 0) const {
    CommandContext c;
    c.seed = seed;
    c.out = ws;
    c.log = &std::cerr;
    return c;
  }

  // Runs `fn` once per process, or not at all when reusing and `marker` exists.
  void prep(const std::string& name, const fs::path& marker, const std::function<void()>& fn) {
    if (done.count(name)) return;
    if (!(reuse && fs::exists(marker))) fn();
    done.insert(name);
  }

  void data() { prep("data", ws / "gen-data.json", [&] { cmd_gen_data(ctx()); }); }
  void vae() {
    data();
    prep("vae", ws / "vae.ckpt", [&] {
      const auto t0 = Clock::now();
      cmd_train_vae(ctx());
      spit(ws / "vae_seconds.txt", fmt("%.1f", since(t0)));
    });
  }
  void anchors() {
    vae();
    prep("anchors", ws / "anchors" / "anchors.bin", [&] { cmd_gen_anchors(ctx()); });
  }
};

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// 1 --------------------------------------------------------------------------

void criterion1(Env& env) {
  const auto t0 = Clock::now();
  const Summary s = cmd_check_grads(env.ctx(), 100);
  const double secs = since(t0);
  std::string worst;
  for (const auto& row : s["losses"])
    worst += fmt(" %s=%.2e/%d", row["loss"].get<std::string>().c_str(), row["worst_rel_error"].get<double>(),
                 row["failures"].get<int>());
  report(1, s["passed"].get<bool>() && secs < 120.0,
         fmt("100 seeds per loss, worst rel err/failures:%s, %.1f s (limit 120 s, tol 1e-2)", worst.c_str(), secs));
}

// 2 --------------------------------------------------------------------------

void criterion2() {
  Tape t;
  const float kl = gaussian_kl(t.constant(Tensor({1, 32}, 1.0f)), t.constant(Tensor({1, 32}))).item() / 32.0f;

  Tensor z({2, 32});
  z.vec()[0] = 1.0f;
  z.vec()[32 + 1] = 1.0f;
  const float nce = contrastive_loss_cosine(t.constant(z), t.constant(z), 1.0f).item();

  std::vector<float> mu(32, 0.3f);
  const float nll = mdn_nll_terms(t.constant(Tensor({1, 1})), t.constant(Tensor({1, 32}, mu)), t.constant(Tensor({1, 1})),
                                  Tensor({1, 32}, mu))
                        .item();
  const double nll_expect = 16.0 * std::log(2.0 * kPi);

  const RobotPose arc = step_dynamics({}, Action(1, 1), kPi / 2, DriveLimits{1.0, 1.0});

  const bool ok_kl = std::abs(kl - 0.5) < 1e-6;
  const bool ok_nce = std::abs(nce - 0.6266) < 1e-3;
  const bool ok_nll = std::abs(nll - nll_expect) < 1e-3;
  const bool ok_arc = std::abs(arc.x - 1) < 1e-5 && std::abs(arc.y - 1) < 1e-5 && std::abs(arc.heading - kPi / 2) < 1e-5;
  report(2, ok_kl && ok_nce && ok_nll && ok_arc,
         fmt("KL/dim %.7f (0.5), InfoNCE %.5f (0.6266+-1e-3), MDN NLL %.5f (%.5f+-1e-3), arc (%.7f, %.7f, %.7f)", kl,
             nce, nll, nll_expect, arc.x, arc.y, arc.heading));
}

// 3 --------------------------------------------------------------------------

void criterion3(Env& env) {
  env.vae();
  const json s = read_json(env.ws / "train-vae.json");
  const double iou = s["heldout_iou"].get<double>();
  const double secs = std::stod(slurp(env.ws / "vae_seconds.txt"));
  report(3, iou >= 0.9 && secs <= 1800.0,
         fmt("held-out BEV IoU %.4f on %d images (>= 0.9), training %.0f s (<= 1800 s), seed 0", iou,
             s["heldout_images"].get<int>(), secs));
}

// 4 --------------------------------------------------------------------------

void criterion4(Env& env) {
  env.anchors();
  bool pass = true;
  std::string detail;
  // Seed 0 runs last so the workspace keeps its checkpoints for criterion 5.
  for (std::uint64_t seed : {1, 2, 0}) {
    const CommandContext c = env.ctx(seed);
    cmd_train_encoder(c, LossMode::CosineInfoNce);
    cmd_train_encoder(c, LossMode::Mse);
    cmd_train_baseline(c);
    const Summary s = cmd_eval_class(c);
    const double cos_ho = s["holdout"]["cosine-infonce"], mse_ho = s["holdout"]["mse"], base_ho = s["holdout"]["baseline"];
    const double cos_tr = s["train"]["cosine-infonce"], mse_tr = s["train"]["mse"], base_tr = s["train"]["baseline"];
    const bool ok = cos_ho > base_ho && mse_ho > base_ho && cos_tr > 0.8 && mse_tr > 0.8;
    pass = pass && ok;
    check_line(fmt("encoder seed %llu: holdout cosine %.3f mse %.3f baseline %.3f; train-style cosine %.3f mse %.3f "
                   "baseline %.3f -> %s",
                   static_cast<unsigned long long>(seed), cos_ho, mse_ho, base_ho, cos_tr, mse_tr, base_tr,
                   ok ? "ok" : "miss"));
    detail += fmt(" s%llu[ho %.3f/%.3f vs %.3f, tr %.3f/%.3f]", static_cast<unsigned long long>(seed), cos_ho, mse_ho,
                  base_ho, cos_tr, mse_tr);
  }
  report(4, pass, "cosine/mse nearest-anchor acc vs baseline, 3 seeds:" + detail + " (holdout > baseline, train-style > 0.8)");
}

// 5 --------------------------------------------------------------------------

void criterion5(Env& env) {
  env.anchors();
  if (!fs::exists(env.ws / "encoder_mse.ckpt")) cmd_train_encoder(env.ctx(), LossMode::Mse);
  env.prep("memory", env.ws / "memory.ckpt", [&] { cmd_train_memory(env.ctx()); });
  const json mem = read_json(env.ws / "train-memory.json");
  check_line(fmt("memory held-out NLL %.3f vs copy-last %.3f", mem["heldout_nll"].get<double>(),
                 mem["copy_last_nll"].get<double>()));

  CommandContext c = env.ctx();
  c.cfg.eval.encoder_mode = "mse";
  c.cfg.corruption = CorruptionSpec{0.0, 0.2, 0};
  const Summary s = cmd_eval_seq(c);
  int acc_ok = 0, ce_ok = 0, mse_ok = 0;
  const auto& rows = s["holdout"];
  std::string detail;
  for (const auto& row : rows) {
    const auto &f = row["full"], &r = row["raw"];
    acc_ok += f["acc"].get<double>() >= r["acc"].get<double>();
    ce_ok += f["ce"].get<double>() <= r["ce"].get<double>();
    mse_ok += f["mse"].get<double>() <= r["mse"].get<double>();
    detail += fmt(" [acc %.3f/%.3f ce %.3f/%.3f mse %.4f/%.4f]", f["acc"].get<double>(), r["acc"].get<double>(),
                  f["ce"].get<double>(), r["ce"].get<double>(), f["mse"].get<double>(), r["mse"].get<double>());
    check_line(fmt("holdout sequence %d: asc-only acc %.3f", row["sequence"].get<int>(), row["asc"]["acc"].get<double>()));
  }
  const int n = static_cast<int>(rows.size());
  report(5, n == 5 && acc_ok == n && ce_ok >= 4 && mse_ok >= 4,
         fmt("garble 0.2, rho %.4f, with/without checks:%s; ACC >= in %d/%d, CE <= in %d/%d, MSE <= in %d/%d", s["rho"].get<double>(),
             detail.c_str(), acc_ok, n, ce_ok, n, mse_ok, n));
}

// 6 --------------------------------------------------------------------------

AnchorSet random_anchors(Rng& rng, int n, bool integer) {
  AnchorSet a;
  a.latents = Tensor({n, kLatentDim});
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::uniform_int_distribution<int> k(-3, 3);
  for (float& v : a.latents.vec()) v = integer ? static_cast<float>(k(rng)) : g(rng);
  for (int i = 0; i < n; ++i) {
    a.labels.push_back(static_cast<RoadClass>(i % kNumClasses));
    a.ids.push_back(i);
  }
  return a;
}

int brute_nearest(const std::vector<float>& z, const AnchorSet& a) {
  int best = -1;
  double bd = 0;
  for (int i = 0; i < a.size(); ++i) {
    double d = 0;
    for (int j = 0; j < kLatentDim; ++j) {
      const double e = static_cast<double>(z[static_cast<std::size_t>(j)]) - a.row(i)[j];
      d += e * e;
    }
    if (best < 0 || d < bd) best = i, bd = d;
  }
  return best;
}

double sq_dist(const std::vector<float>& z, const float* a) {
  double d = 0;
  for (int j = 0; j < kLatentDim; ++j) {
    const double e = static_cast<double>(z[static_cast<std::size_t>(j)]) - a[j];
    d += e * e;
  }
  return d;
}

void criterion6() {
  constexpr int kCases = 10000;
  Rng rng(6);
  std::normal_distribution<float> g(0.0f, 1.0f);
  int membership = 0, idempotent = 0, nearest = 0, ties = 0, boundary = 0, below = 0, bootstrap = 0;
  for (int c = 0; c < kCases; ++c) {
    AnchorSet a = random_anchors(rng, 2 + static_cast<int>(rng() % 40), false);
    a.finalize();
    std::vector<float> z(kLatentDim);
    for (float& v : z) v = 1.5f * g(rng);
    const ConfidenceMetric metric = c % 2 ? ConfidenceMetric::Cosine : ConfidenceMetric::NegDistance;
    const AscResult r = asc(z, a, metric);
    membership += r.index >= 0 && r.index < a.size() && r.z_bar == a.latent(r.index);
    const int o = brute_nearest(z, a);
    // Equal index, or an exact-distance tie the float search resolved either way.
    nearest += o == r.index || std::abs(sq_dist(z, a.row(o)) - sq_dist(z, a.row(r.index))) <= 1e-6 * sq_dist(z, a.row(o));
    const AscResult again = asc(r.z_bar, a, metric);
    idempotent += again.index == r.index && again.z_bar == r.z_bar;

    // Ties: anchors z + d and z - d on an integer grid are exactly equidistant.
    AnchorSet t = random_anchors(rng, 4 + static_cast<int>(rng() % 20), true);
    std::vector<float> zi(kLatentDim), d(kLatentDim);
    std::uniform_int_distribution<int> k(-3, 3);
    for (int j = 0; j < kLatentDim; ++j) zi[j] = static_cast<float>(k(rng)), d[j] = static_cast<float>(k(rng) % 2);
    d[static_cast<std::size_t>(rng() % kLatentDim)] = 1.0f;
    const int i1 = static_cast<int>(rng() % t.size());
    int i2 = static_cast<int>(rng() % t.size());
    if (i2 == i1) i2 = (i1 + 1) % t.size();
    double dd = 0;
    for (int j = 0; j < kLatentDim; ++j) dd += d[j] * d[j];
    for (int i = 0; i < t.size(); ++i) {
      float* row = t.latents.data() + static_cast<std::size_t>(i) * kLatentDim;
      if (i == i1 || i == i2) {
        const float s = i == i1 ? 1.0f : -1.0f;
        for (int j = 0; j < kLatentDim; ++j) row[j] = zi[j] + s * d[j];
      } else if (sq_dist(zi, row) <= dd) {
        row[0] = zi[0] + 100.0f;  // keep other anchors strictly farther
      }
    }
    t.finalize();
    ties += asc(zi, t, ConfidenceMetric::NegDistance).index == std::min(i1, i2);

    // Gate boundary.
    std::vector<float> zb(kLatentDim), zp(kLatentDim);
    for (int j = 0; j < kLatentDim; ++j) zb[j] = g(rng), zp[j] = g(rng);
    const float rho = 2.0f * g(rng);
    const TscResult at = tsc(zb, rho, zp, rho);
    boundary += at.accepted && at.z == zb;
    const TscResult under = tsc(zb, std::nextafter(rho, -INFINITY), zp, rho);
    below += !under.accepted && under.z == zp;
    const TscResult first = tsc(zb, rho - 1.0f, std::nullopt, rho);
    bootstrap += first.z == zb;
  }
  const bool pass = membership == kCases && idempotent == kCases && nearest == kCases && ties == kCases &&
                    boundary == kCases && below == kCases && bootstrap == kCases;
  report(6, pass,
         fmt("%d cases each: membership %d, nearest-vs-brute-force %d, idempotence %d, lowest-index ties %d, tau=rho "
             "accept %d, tau<rho replace %d, no-prediction keep %d",
             kCases, membership, nearest, idempotent, ties, boundary, below, bootstrap));
}

// 7 --------------------------------------------------------------------------

void criterion7(Env& env) {
  env.vae();
  auto policy_ctx = [&](std::uint64_t seed, double threshold) {
    CommandContext c = env.ctx(seed);
    PolicySettings& p = c.cfg.policy;
    p.corridor_length_m = 24.0;
    p.ppo.waypoint_resolution_m = 8.0;  // three waypoints
    p.ppo.waypoint_threshold_m = threshold;
    p.max_steps = 200000;
    return c;
  };

  CommandContext a = policy_ctx(0, 5.0);
  const Summary s = cmd_train_policy(a);
  const double success = s["eval_success"];
  const long steps = s["env_steps"];
  const bool pass_a = success >= 0.8 && steps <= 200000;
  check_line(fmt("7a: seed 0, 3-waypoint corridor, threshold 5 m: success %.2f over %d episodes after %ld env steps",
                 success, s["eval_episodes"].get<int>(), steps));

  std::vector<double> m5, m1;
  std::string detail;
  for (double thr : {5.0, 1.0}) {
    for (std::uint64_t seed : {0, 1, 2}) {
      CommandContext c = policy_ctx(seed, thr);
      c.cfg.policy.check_every = 0;
      c.cfg.policy.stop_at_milestone = true;
      c.cfg.policy.eval_episodes = 20;
      const Summary r = cmd_train_policy(c);
      const long m = r["steps_to_milestone"];
      // Not reached within the budget counts as beyond it.
      const double v = m < 0 ? static_cast<double>(c.cfg.policy.max_steps + 1) : static_cast<double>(m);
      (thr == 5.0 ? m5 : m1).push_back(v);
      detail += fmt(" %gm/s%llu=%ld", thr, static_cast<unsigned long long>(seed), m);
    }
  }
  const double med5 = median(m5), med1 = median(m1);
  check_line(fmt("7b: steps to milestone (-1 = not within 200k):%s", detail.c_str()));
  report(7, pass_a && med5 < med1,
         fmt("7a success %.2f after %ld steps (>= 0.80 within 200k); 7b median steps-to-milestone 5 m %.0f < 1 m %.0f",
             success, steps, med5, med1));
}

// 8 --------------------------------------------------------------------------

void criterion8() {
  Rng rng(8);
  const TileMap map = generate_map(8, 8, rng);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  RobotPose pose = sample_road_pose(map, rng);
  constexpr long kSteps = 400000;
  std::vector<Action> actions(4096);
  for (auto& a : actions) a = Action(0.5f + 0.5f * u(rng), u(rng));
  long collisions = 0;
  auto t0 = Clock::now();
  for (long i = 0; i < kSteps; ++i) {
    pose = step_dynamics(pose, actions[static_cast<std::size_t>(i) & 4095], 0.1);
    if (curb_collision(map, pose)) {
      ++collisions;
      pose = sample_road_pose(map, rng);
    }
  }
  const double sps = kSteps / since(t0);

  std::vector<RobotPose> poses;
  for (int i = 0; i < 256; ++i) poses.push_back(sample_road_pose(map, rng));
  constexpr int kFrames = 5000;
  std::size_t road = 0;
  t0 = Clock::now();
  for (int i = 0; i < kFrames; ++i) road += render_bev(map, poses[static_cast<std::size_t>(i) & 255]).pixels[2080];
  const double fps = kFrames / since(t0);
  check_line(fmt("throughput run: %ld collisions/resets, %zu centre-road frames", collisions, road));
  report(8, sps >= 10000.0 && fps >= 1000.0,
         fmt("dynamics+collision %.0f steps/s (>= 10000), BEV 64x64 render %.0f frames/s (>= 1000)", sps, fps));
}

// 9 --------------------------------------------------------------------------

const char* kTinyConfig = R"({
  "data": {"map_size": 3, "vae_images": 96, "train_views": 64, "test_views": 24,
           "train_sequences": 3, "test_sequences": 2, "sequence_length": 24},
  "vae": {"epochs": 2, "batch_size": 16},
  "encoder": {"epochs": 2, "batch_size": 16},
  "memory": {"hidden": 32, "epochs": 2, "chunk": 8},
  "statecheck": {"anchors": 60},
  "policy": {"rollout": 256, "minibatch": 64, "epochs": 2, "max_steps": 1024, "eval_episodes": 3,
             "check_episodes": 2, "check_every": 1, "timeout": 60},
  "eval": {"episodes": 2, "dump_frames": true},
  "corruption": {"drop_rate": 0.1, "garble_rate": 0.2, "delay_every": 7}
})";

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

void criterion9(Env& env) {
  const AppConfig cfg = parse_config(kTinyConfig);
  auto run = [&](const fs::path& dir) {
    fs::remove_all(dir);
    CommandContext c;
    c.cfg = cfg;
    c.seed = 9;
    c.out = dir;
    cmd_gen_data(c);
    cmd_train_vae(c);
    cmd_gen_anchors(c);
    cmd_train_encoder(c, LossMode::CosineInfoNce);
    cmd_train_encoder(c, LossMode::Mse);
    cmd_train_baseline(c);
    cmd_train_memory(c);
    cmd_train_policy(c);
    cmd_rollout(c);
    return read_tree(dir);
  };
  const auto a = run(env.ws / "determinism_a");
  const auto b = run(env.ws / "determinism_b");
  int same = 0, checkpoints = 0, logs = 0;
  std::vector<std::string> differ;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it != b.end() && it->second == bytes) ++same;
    else differ.push_back(name);
    checkpoints += name.size() > 5 && name.substr(name.size() - 5) == ".ckpt";
    logs += name.size() > 4 && name.substr(name.size() - 4) == ".csv";
  }
  std::string list;
  for (std::size_t i = 0; i < differ.size() && i < 5; ++i) list += " " + differ[i];
  report(9, differ.empty() && a.size() == b.size() && checkpoints == 6,
         fmt("two runs of every train-* command and rollout, seed 9: %d/%zu files bit-identical (%d checkpoints, %d "
             "CSV logs)%s%s",
             same, a.size(), checkpoints, logs, differ.empty() ? "" : ", differing:", list.c_str()));
}

// 10 -------------------------------------------------------------------------

bool same_trajectory(const Trajectory& x, const Trajectory& y) {
  if (x.records.size() != y.records.size()) return false;
  for (std::size_t i = 0; i < x.records.size(); ++i) {
    const auto &a = x.records[i], &b = y.records[i];
    if (!(a.fpv == b.fpv && a.bev == b.bev && a.cls == b.cls && a.t == b.t)) return false;
    if (std::memcmp(&a.action.throttle, &b.action.throttle, 4) || std::memcmp(&a.action.steer, &b.action.steer, 4))
      return false;
    if (std::memcmp(&a.pose.x, &b.pose.x, 8) || std::memcmp(&a.pose.y, &b.pose.y, 8) ||
        std::memcmp(&a.pose.heading, &b.pose.heading, 8))
      return false;
  }
  return true;
}

void criterion10(Env& env) {
  const fs::path dir = env.ws / "format";
  fs::remove_all(dir);
  Rng rng(10);
  std::vector<Trajectory> seqs;
  for (int i = 0; i < 3; ++i) {
    TileMap map = generate_map(4, 4, rng);
    CollectSpec spec;
    spec.steps = 20;
    seqs.push_back(collect_trajectory(map, {}, spec, sample_style(i ? StyleFamily::Holdout : StyleFamily::Train, rng), rng));
  }
  write_dataset(seqs, dir / "ds1");
  const auto back = read_dataset(dir / "ds1");
  bool ds_ok = back.size() == seqs.size();
  for (std::size_t i = 0; ds_ok && i < seqs.size(); ++i) ds_ok = same_trajectory(seqs[i], back[i]);
  write_dataset(back, dir / "ds2");
  const bool ds_bytes = read_tree(dir / "ds1") == read_tree(dir / "ds2");

  NamedTensors tensors;
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (int i = 0; i < 8; ++i) {
    Tensor t({1 + static_cast<int>(rng() % 7), 1 + static_cast<int>(rng() % 9)});
    for (float& v : t.vec()) v = g(rng) * std::ldexp(1.0f, static_cast<int>(rng() % 40) - 20);
    tensors.emplace_back("t" + std::to_string(i), std::move(t));
  }
  tensors.emplace_back("special", Tensor({4}, std::vector<float>{-0.0f, 1e-42f, 3.4e38f, -1.17549435e-38f}));
  checkpoint_write(tensors, dir / "a.ckpt");
  const NamedTensors tb = checkpoint_read(dir / "a.ckpt");
  bool ck_ok = tb.size() == tensors.size();
  for (std::size_t i = 0; ck_ok && i < tb.size(); ++i)
    ck_ok = tb[i].first == tensors[i].first && tb[i].second.shape() == tensors[i].second.shape() &&
            std::memcmp(tb[i].second.data(), tensors[i].second.data(), tensors[i].second.size() * 4) == 0;
  checkpoint_write(tb, dir / "b.ckpt");
  const bool ck_bytes = slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt");

  // A flipped payload bit must be caught by the CRC.
  std::string bad = slurp(dir / "a.ckpt");
  bad[bad.size() - 20] ^= 0x04;
  spit(dir / "bad.ckpt", bad);
  bool ck_crc = false;
  try {
    checkpoint_read(dir / "bad.ckpt");
  } catch (const ChecksumError&) {
    ck_crc = true;
  } catch (const Error&) {
  }
  fs::path image;
  for (const auto& e : fs::recursive_directory_iterator(dir / "ds1"))
    if (e.path().extension() == ".ppm") image = e.path();
  bool ds_crc = false;
  if (!image.empty()) {
    std::string img = slurp(image);
    img[img.size() - 3] ^= 0x01;
    spit(image, img);
    try {
      read_dataset(dir / "ds1");
    } catch (const ChecksumError&) {
      ds_crc = true;
    } catch (const Error&) {
    }
  }
  report(10, ds_ok && ds_bytes && ck_ok && ck_bytes && ck_crc && ds_crc,
         fmt("dataset roundtrip %s, rewrite bytes %s, flipped image byte -> ChecksumError %s; checkpoint roundtrip %s, "
             "rewrite bytes %s, flipped payload byte -> ChecksumError %s",
             ds_ok ? "exact" : "MISMATCH", ds_bytes ? "identical" : "DIFFER", ds_crc ? "yes" : "NO",
             ck_ok ? "exact" : "MISMATCH", ck_bytes ? "identical" : "DIFFER", ck_crc ? "yes" : "NO"));
}

}  // namespace

int main(int argc, char** argv) {
  Env env;
  env.ws = "acceptance_ws";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--ws" && i + 1 < argc) env.ws = argv[++i];
    else if (a == "--reuse") env.reuse = true;
    else only.insert(std::stoi(a));
  }
  fs::create_directories(env.ws);
  auto want = [&](int id) { return only.empty() || only.count(id); };
  // Cheap criteria first, then the training-heavy ones in dependency order.
  const std::vector<std::pair<int, std::function<void()>>> plan = {
      {1, [&] { criterion1(env); }}, {2, [] { criterion2(); }},        {6, [] { criterion6(); }},
      {8, [] { criterion8(); }},     {10, [&] { criterion10(env); }}, {9, [&] { criterion9(env); }},
      {3, [&] { criterion3(env); }}, {4, [&] { criterion4(env); }},   {5, [&] { criterion5(env); }},
      {7, [&] { criterion7(env); }},
  };
  for (const auto& [id, fn] : plan) {
    if (!want(id)) continue;
    const auto t0 = Clock::now();
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("error: ") + e.what());
    }
    std::cerr << "[criterion " << id << " took " << fmt("%.1f", since(t0)) << " s]\n";
  }
  std::printf("summary:");
  int failed = 0;
  for (const auto& [id, r] : g_results) {
    std::printf(" %d=%s", id, r.first ? "PASS" : "FAIL");
    failed += !r.first;
  }
  std::printf("\n");
  return failed ? 1 : 0;
}

#include "wmnav/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>

#include "wmnav/error.hpp"
#include "wmnav/gradsuite.hpp"

namespace wmnav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void say(const CommandContext& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << std::endl;
}

// Summaries hold no timings so reruns produce identical files.
Summary finish(const CommandContext& ctx, const std::string& verb, Summary s, const Stopwatch* sw = nullptr) {
  if (sw) say(ctx, verb + " finished in " + std::to_string(sw->seconds()) + " s");
  fs::create_directories(ctx.out);
  std::ofstream(ctx.out / (verb + ".json")) << s.dump(2) << "\n";
  return s;
}

void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw MissingFileError(p.string() + " not found; run " + producer + " first");
}

std::vector<Trajectory> load_set(const Workspace& ws, const char* name) {
  require_file(ws.data(name) / "manifest.json", "gen-data");
  return read_dataset(ws.data(name));
}

BevVae load_vae(const Workspace& ws) {
  require_file(ws.vae(), "train-vae");
  BevVae v;
  v.load(checkpoint_read(ws.vae()));
  return v;
}

FpvEncoder load_encoder(const Workspace& ws, LossMode m) {
  require_file(ws.encoder(m), "train-encoder");
  FpvEncoder e;
  e.load(checkpoint_read(ws.encoder(m)));
  return e;
}

void write_losses(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  out << "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i + 1, losses[i]);
    out << buf;
  }
}

json report_json(const EvalReport& r) {
  json per = json::object();
  for (int k = 0; k < kNumClasses; ++k) {
    const ClassStats& s = r.per_class[static_cast<std::size_t>(k)];
    per[class_names()[static_cast<std::size_t>(k)]] =
        s.present ? json{{"acc", s.acc}, {"ce", s.ce}, {"mse", s.mse}, {"count", s.count}} : json(nullptr);
  }
  return {{"acc", r.overall.acc}, {"ce", r.overall.ce}, {"mse", r.overall.mse}, {"count", r.overall.count},
          {"per_class", per}};
}

// Ground-truth latent of the current pose, used to train and check the policy.
LatentSource bev_latent_source(BevVae& vae) {
  return [&vae](const TileMap& map, const RobotPose& pose) { return vae.embed(render_bev(map, pose)); };
}

TaskSampler corridor_sampler(const PolicySettings& p) {
  return [len = p.corridor_length_m, res = p.ppo.waypoint_resolution_m](Rng& rng) { return corridor_task(len, res, rng); };
}

}  // namespace

std::vector<LabeledView> views_from_dataset(const std::vector<Trajectory>& seqs) {
  std::vector<LabeledView> out;
  for (const auto& s : seqs)
    for (const auto& r : s.records) out.push_back({r.fpv, r.bev, r.cls, r.pose, s.style});
  return out;
}

std::vector<Trajectory> views_to_dataset(const std::vector<LabeledView>& views) {
  std::vector<Trajectory> out;
  out.reserve(views.size());
  for (const auto& v : views) {
    Trajectory t;
    t.style = v.style;
    TrajectoryRecord r;
    r.fpv = v.fpv;
    r.bev = v.bev;
    r.pose = v.pose;
    r.cls = v.cls;
    t.records.push_back(std::move(r));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<LatentSequence> latent_sequences(BevVae& vae, const std::vector<Trajectory>& seqs) {
  std::vector<LatentSequence> out;
  for (const auto& s : seqs) {
    std::vector<const BevImage*> bevs;
    LatentSequence ls;
    for (const auto& r : s.records) bevs.push_back(&r.bev), ls.actions.push_back(r.action);
    ls.latents = vae.encode_mean(bevs);
    out.push_back(std::move(ls));
  }
  return out;
}

Summary cmd_gen_data(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  const DataConfig& d = ctx.cfg.data;
  Stopwatch sw;
  // One stream per set, so resizing one set leaves the others unchanged.
  std::uint64_t set_index = 0;
  auto stream = [&] {
    std::seed_seq seq{ctx.seed, set_index++};
    return Rng(seq);
  };
  ViewSpec vs;
  vs.map_size = d.map_size;
  json counts;
  auto views = [&](const char* name, int n, StyleFamily fam) {
    Rng rng = stream();
    auto v = sample_views(n, fam, rng, vs);
    write_dataset(views_to_dataset(v), ws.data(name));
    counts[name] = n;
    say(ctx, std::string("wrote ") + name + " (" + std::to_string(n) + " views)");
  };
  auto seqs = [&](const char* name, int n, StyleFamily fam) {
    Rng rng = stream();
    std::vector<Trajectory> out;
    CollectSpec cs;
    cs.steps = d.sequence_length;
    for (int k = 0; k < n; ++k) {
      const TileMap map = generate_map(d.map_size, d.map_size, rng);
      const RenderStyle style = sample_style(fam, rng);
      out.push_back(collect_trajectory(map, {}, cs, style, rng));
    }
    write_dataset(out, ws.data(name));
    counts[name] = n;
    say(ctx, std::string("wrote ") + name + " (" + std::to_string(n) + " sequences)");
  };
  views(kTrainViews, d.train_views, StyleFamily::Train);
  views(kTestViewsTrain, d.test_views, StyleFamily::Train);
  views(kTestViewsHoldout, d.test_views, StyleFamily::Holdout);
  seqs(kTrainSeqs, d.train_sequences, StyleFamily::Train);
  seqs(kTestSeqsTrain, d.test_sequences, StyleFamily::Train);
  seqs(kTestSeqsHoldout, d.test_sequences, StyleFamily::Holdout);
  return finish(ctx, "gen-data", {{"seed", ctx.seed}, {"sets", counts}}, &sw);
}

Summary cmd_train_vae(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  Stopwatch sw;
  // Labelled views plus driving frames, thinned to the configured budget.
  std::vector<BevImage> pool;
  for (const char* set : {kTrainViews, kTrainSeqs})
    for (const auto& s : load_set(ws, set))
      for (const auto& r : s.records) pool.push_back(r.bev);
  const int n = std::min<int>(ctx.cfg.data.vae_images, static_cast<int>(pool.size()));
  std::vector<BevImage> data;
  for (int i = 0; i < n; ++i) data.push_back(pool[static_cast<std::size_t>(i) * pool.size() / static_cast<std::size_t>(n)]);
  say(ctx, "training VAE on " + std::to_string(n) + " BEV images");
  TrainCurve curve;
  BevVae vae = train_vae(data, ctx.cfg.vae, ctx.seed, &curve);
  checkpoint_write(vae.state(), ws.vae());
  write_losses(ctx.out / "vae_curve.csv", curve.epoch_loss);

  std::vector<BevImage> test;
  for (const char* set : {kTestViewsTrain, kTestViewsHoldout})
    for (const auto& s : load_set(ws, set))
      for (const auto& r : s.records) test.push_back(r.bev);
  std::vector<const BevImage*> ptrs;
  for (const auto& b : test) ptrs.push_back(&b);
  const Tensor probs = vae.decode(vae.encode_mean(ptrs));
  const std::size_t pix = probs.size() / test.size();
  double iou = 0;
  for (std::size_t i = 0; i < test.size(); ++i) iou += bev_iou(probs.data() + i * pix, test[i]);
  iou /= static_cast<double>(test.size());
  say(ctx, "held-out mean IoU " + std::to_string(iou));
  return finish(ctx, "train-vae",
                {{"seed", ctx.seed}, {"images", n}, {"final_loss", curve.epoch_loss.back()}, {"heldout_iou", iou},
                 {"heldout_images", test.size()}}, &sw);
}

Summary cmd_gen_anchors(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  BevVae vae = load_vae(ws);
  const AnchorSet s = build_anchor_set(vae, ctx.cfg.statecheck.anchors, ctx.seed);
  write_anchor_set(s, ws.anchors());
  json per = json::object();
  for (int k = 0; k < kNumClasses; ++k)
    per[class_names()[static_cast<std::size_t>(k)]] =
        std::count(s.labels.begin(), s.labels.end(), static_cast<RoadClass>(k));
  say(ctx, "wrote " + std::to_string(s.size()) + " anchors");
  return finish(ctx, "gen-anchors", {{"seed", ctx.seed}, {"count", s.size()}, {"per_class", per}});
}

Summary cmd_train_encoder(const CommandContext& ctx, std::optional<LossMode> mode) {
  const Workspace ws{ctx.out};
  EncoderConfig cfg = ctx.cfg.encoder;
  if (mode) cfg.mode = *mode;
  BevVae vae = load_vae(ws);
  const auto views = views_from_dataset(load_set(ws, kTrainViews));
  say(ctx, "training " + loss_mode_name(cfg.mode) + " encoder on " + std::to_string(views.size()) + " views");
  Stopwatch sw;
  EncoderCurve curve;
  FpvEncoder enc = train_encoder(views, vae, cfg, ctx.seed, &curve);
  checkpoint_write(enc.state(), ws.encoder(cfg.mode));
  write_losses(ctx.out / ("encoder_" + loss_mode_name(cfg.mode) + "_curve.csv"), curve.epoch_loss);
  return finish(ctx, "train-encoder",
                {{"seed", ctx.seed}, {"mode", loss_mode_name(cfg.mode)}, {"final_loss", curve.epoch_loss.back()}}, &sw);
}

Summary cmd_train_baseline(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  const auto views = views_from_dataset(load_set(ws, kTrainViews));
  say(ctx, "training baseline classifier on " + std::to_string(views.size()) + " views");
  Stopwatch sw;
  EncoderCurve curve;
  BaselineClassifier cls = train_baseline_classifier(views, ctx.cfg.encoder, ctx.seed, &curve);
  checkpoint_write(cls.state(), ws.baseline());
  write_losses(ctx.out / "baseline_curve.csv", curve.epoch_loss);
  const double self = eval_baseline(cls, views).overall.acc;
  return finish(ctx, "train-baseline",
                {{"seed", ctx.seed}, {"final_loss", curve.epoch_loss.back()}, {"train_accuracy", self}}, &sw);
}

Summary cmd_train_memory(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  BevVae vae = load_vae(ws);
  const auto train = latent_sequences(vae, load_set(ws, kTrainSeqs));
  const auto test = latent_sequences(vae, load_set(ws, kTestSeqsTrain));
  say(ctx, "training memory on " + std::to_string(train.size()) + " sequences");
  Stopwatch sw;
  MemoryCurve curve;
  MdnLstm model = train_memory(train, ctx.cfg.memory, ctx.seed, &curve);
  checkpoint_write(model.state(), ws.memory());
  write_losses(ctx.out / "memory_curve.csv", curve.epoch_nll);
  const double nll = evaluate_memory_nll(model, test);
  const double base = CopyLastBaseline::fit(train).nll(test);
  say(ctx, "held-out NLL " + std::to_string(nll) + " (copy-last " + std::to_string(base) + ")");
  return finish(ctx, "train-memory",
                {{"seed", ctx.seed}, {"final_nll", curve.epoch_nll.back()}, {"heldout_nll", nll},
                 {"copy_last_nll", base}, {"skipped", curve.skipped}}, &sw);
}

Summary cmd_train_policy(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  const PolicySettings& p = ctx.cfg.policy;
  BevVae vae = load_vae(ws);
  const LatentSource latent = bev_latent_source(vae);
  const TaskSampler tasks = corridor_sampler(p);
  Stopwatch sw;
  int updates = 0;
  StopHook stop = [&](PolicyNet& net, const std::vector<CurveRow>& curve, long steps) {
    if (p.stop_at_milestone && steps_to_milestone(curve) >= 0) return true;
    if (p.check_every <= 0 || ++updates % p.check_every) return false;
    const double sr = evaluate_policy(net, tasks, latent, p.ppo, p.check_episodes, ctx.seed + 1000003);
    say(ctx, "steps " + std::to_string(steps) + " check success " + std::to_string(sr));
    return sr >= p.stop_success;
  };
  TrainResult res = train_policy(tasks, latent, p.ppo, ctx.seed, p.max_steps, stop);
  checkpoint_write(res.net.state(), ws.policy());
  write_curve_csv(res.curve, ctx.out / "policy_curve.csv");
  const double success = evaluate_policy(res.net, tasks, latent, p.ppo, p.eval_episodes, ctx.seed + 2000003);
  say(ctx, "trained for " + std::to_string(res.steps) + " steps, eval success " + std::to_string(success));
  return finish(ctx, "train-policy",
                {{"seed", ctx.seed},
                 {"env_steps", res.steps},
                 {"episodes", res.curve.size()},
                 {"eval_success", success},
                 {"eval_episodes", p.eval_episodes},
                 {"steps_to_milestone", steps_to_milestone(res.curve)}}, &sw);
}

Models load_models(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  const LossMode mode = loss_mode_from_name(ctx.cfg.eval.encoder_mode);
  Models m;
  m.vae = load_vae(ws);
  m.encoder = load_encoder(ws, mode);
  require_file(ws.memory(), "train-memory");
  m.memory.load(checkpoint_read(ws.memory()));
  m.anchors = read_anchor_set(ws.anchors());
  float rho = 0;
  if (ctx.cfg.statecheck.rho) {
    rho = *ctx.cfg.statecheck.rho;
  } else {
    const StateCheckConfig probe = default_check_config(mode, 0.0f);
    const auto views = views_from_dataset(load_set(ws, kTestViewsTrain));
    std::vector<const FpvImage*> imgs;
    for (const auto& v : views) imgs.push_back(&v.fpv);
    const Tensor z = m.encoder.embed_batch(imgs);
    std::vector<float> conf;
    for (int i = 0; i < z.shape()[0]; ++i) {
      std::vector<float> row(z.data() + static_cast<std::size_t>(i) * kLatentDim,
                             z.data() + static_cast<std::size_t>(i + 1) * kLatentDim);
      conf.push_back(asc(row, m.anchors, probe.metric, probe.unit_search).confidence);
    }
    rho = calibrate_rho(conf, ctx.cfg.statecheck.rho_percentile);
  }
  m.check = default_check_config(mode, rho);
  return m;
}

Summary cmd_eval_class(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  const AnchorSet anchors = read_anchor_set(ws.anchors());
  json out{{"seed", ctx.seed}};
  const std::pair<const char*, const char*> sets[] = {{"train", kTestViewsTrain}, {"holdout", kTestViewsHoldout}};
  for (const auto& [family, set] : sets) {
    const auto views = views_from_dataset(load_set(ws, set));
    json fam;
    for (LossMode m : {LossMode::CosineInfoNce, LossMode::Mse}) {
      if (!fs::exists(ws.encoder(m))) continue;
      FpvEncoder enc = load_encoder(ws, m);
      const EvalReport r = eval_classification(enc, anchors, views, default_check_config(m, 0.0f));
      write_report_csv(r, ctx.out / ("eval_class_" + std::string(family) + "_" + loss_mode_name(m) + ".csv"), false);
      fam[loss_mode_name(m)] = r.overall.acc;
      say(ctx, std::string(family) + " " + loss_mode_name(m) + " accuracy " + std::to_string(r.overall.acc));
    }
    if (fs::exists(ws.baseline())) {
      BaselineClassifier cls;
      cls.load(checkpoint_read(ws.baseline()));
      const EvalReport r = eval_baseline(cls, views);
      write_report_csv(r, ctx.out / ("eval_class_" + std::string(family) + "_baseline.csv"), false);
      fam["baseline"] = r.overall.acc;
      say(ctx, std::string(family) + " baseline accuracy " + std::to_string(r.overall.acc));
    }
    if (fam.empty()) throw MissingFileError("no encoder or baseline checkpoints in " + ctx.out.string());
    out[family] = fam;
  }
  return finish(ctx, "eval-class", out);
}

Summary cmd_eval_seq(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  Models m = load_models(ctx);
  const std::pair<const char*, PipelineOptions> variants[] = {
      {"full", {true, true}}, {"asc", {true, false}}, {"raw", {false, false}}};
  json out{{"seed", ctx.seed}, {"rho", m.check.rho}, {"encoder", loss_mode_name(m.encoder.mode())}};
  const std::pair<const char*, const char*> sets[] = {{"train", kTestSeqsTrain}, {"holdout", kTestSeqsHoldout}};
  for (const auto& [family, set] : sets) {
    const auto seqs = load_set(ws, set);
    json rows = json::array();
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      json row{{"sequence", k}};
      // Every variant sees the same corruption draws.
      const std::uint64_t seed = ctx.seed * 1000003ULL + k;
      for (const auto& [name, opt] : variants) {
        const EvalReport r = eval_sequence(m, seqs[k], opt, ctx.cfg.corruption, seed);
        char file[96];
        std::snprintf(file, sizeof file, "eval_seq_%s_%02zu_%s.csv", family, k, name);
        write_report_csv(r, ctx.out / file);
        row[name] = report_json(r);
      }
      say(ctx, std::string(family) + " sequence " + std::to_string(k) + ": acc full " +
                   std::to_string(row["full"]["acc"].get<double>()) + " raw " +
                   std::to_string(row["raw"]["acc"].get<double>()));
      rows.push_back(row);
    }
    out[family] = rows;
  }
  return finish(ctx, "eval-seq", out);
}

Summary cmd_rollout(const CommandContext& ctx) {
  const Workspace ws{ctx.out};
  Models m = load_models(ctx);
  require_file(ws.policy(), "train-policy");
  PolicyNet net;
  net.load(checkpoint_read(ws.policy()));
  const Policy policy = [&net](const std::vector<float>& s) { return net.act(s, nullptr).action; };
  const TaskSampler tasks = corridor_sampler(ctx.cfg.policy);
  Rng rng(ctx.seed);
  EpisodeConfig ec;
  ec.ppo = ctx.cfg.policy.ppo;
  ec.pipeline = {ctx.cfg.eval.use_asc, ctx.cfg.eval.use_memory};
  const StyleFamily family = family_from_name(ctx.cfg.eval.style_family);
  json episodes = json::array();
  int successes = 0;
  for (int e = 0; e < ctx.cfg.eval.episodes; ++e) {
    const NavTask task = tasks(rng);
    ec.style = sample_style(family, rng);
    char name[32];
    std::snprintf(name, sizeof name, "episode_%03d", e);
    ec.frame_dir.reset();
    if (ctx.cfg.eval.dump_frames) ec.frame_dir = ctx.out / "frames" / name;
    const EpisodeLog log = run_episode(task, m, policy, ec, ctx.cfg.corruption, rng);
    write_episode_csv(log, ctx.out / ("rollout_" + std::string(name) + ".csv"));
    int rejected = 0, absent = 0;
    for (const auto& r : log.records) rejected += r.diag.gate == Gate::Rejected, absent += r.diag.gate == Gate::Absent;
    successes += log.outcome == Outcome::Success;
    episodes.push_back({{"outcome", outcome_name(log.outcome)},
                        {"steps", log.records.size()},
                        {"waypoints", log.waypoints},
                        {"waypoints_total", log.waypoints_total},
                        {"rejected", rejected},
                        {"absent", absent}});
    say(ctx, std::string(name) + ": " + outcome_name(log.outcome) + " after " + std::to_string(log.records.size()) + " steps");
  }
  return finish(ctx, "rollout",
                {{"seed", ctx.seed},
                 {"rho", m.check.rho},
                 {"episodes", episodes},
                 {"success_rate", static_cast<double>(successes) / ctx.cfg.eval.episodes}});
}

Summary cmd_check_grads(const CommandContext& ctx, int seeds) {
  const auto rows = run_grad_suite(seeds, 1e-2, ctx.seed);
  json out{{"seed", ctx.seed}, {"seeds", seeds}, {"tolerance", 1e-2}};
  json table = json::array();
  bool ok = true;
  for (const auto& r : rows) {
    table.push_back({{"loss", loss_kind_name(r.kind)}, {"failures", r.failures}, {"worst_rel_error", r.worst}});
    ok = ok && r.failures == 0;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s worst %.3e  failures %d/%d  %.2fs", loss_kind_name(r.kind).c_str(), r.worst,
                  r.failures, r.seeds, r.seconds);
    say(ctx, line);
  }
  out["losses"] = table;
  out["passed"] = ok;
  return finish(ctx, "check-grads", out);
}

}  // namespace wmnav

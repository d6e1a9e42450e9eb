#include "wmnav/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "wmnav/dataset.hpp"
#include "wmnav/error.hpp"

namespace wmnav {

namespace fs = std::filesystem;

StateCheckConfig default_check_config(LossMode mode, float rho) {
  StateCheckConfig c;
  c.rho = rho;
  const bool cosine = mode == LossMode::CosineInfoNce;
  c.metric = cosine ? ConfidenceMetric::Cosine : ConfidenceMetric::NegDistance;
  c.unit_search = cosine;
  return c;
}

std::string gate_name(Gate g) {
  switch (g) {
    case Gate::Accepted: return "accepted";
    case Gate::Rejected: return "rejected";
    case Gate::Bootstrap: return "bootstrap";
    case Gate::Absent: return "absent";
    case Gate::Bypassed: return "bypassed";
  }
  return "?";
}

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Anchor: return "anchor";
    case Provenance::Memory: return "memory";
    case Provenance::Encoder: return "encoder";
    case Provenance::Hold: return "hold";
  }
  return "?";
}

PipelineState initial_pipeline_state(Models& m) {
  PipelineState s;
  s.hidden = m.memory.initial_hidden();
  return s;
}

namespace {

// Anchor closest to the mean of all anchors: the least committal guess when
// the very first frame is missing.
int centroid_anchor(const AnchorSet& anchors) {
  WMNAV_REQUIRE(anchors.size() > 0, "pipeline: empty anchor set");
  std::vector<float> mean(kLatentDim, 0.0f);
  for (int i = 0; i < anchors.size(); ++i)
    for (int d = 0; d < kLatentDim; ++d) mean[static_cast<std::size_t>(d)] += anchors.row(i)[d] / static_cast<float>(anchors.size());
  return asc(mean, anchors, ConfidenceMetric::NegDistance).index;
}

}  // namespace

AdvanceResult advance_state(const FpvImage* o, const Action& a_prev, PipelineState& state, Models& m,
                            const PipelineOptions& opt) {
  std::optional<std::vector<float>> pred;
  if (opt.use_memory && state.z_hat) {
    auto [h, out] = m.memory.mdn_step(state.hidden, *state.z_hat, a_prev);
    state.hidden = std::move(h);
    pred = mdn_select(out, SelectMode::Mode);
  }

  AdvanceResult r;
  StepDiagnostics& d = r.diag;
  if (o) {
    r.z_raw = m.encoder.embed(*o);
    const AscResult a = asc(r.z_raw, m.anchors, m.check.metric, m.check.unit_search);
    d.anchor_index = a.index;
    d.confidence = a.confidence;
    d.anchor_distance = a.distance;
    if (!opt.use_asc) {
      r.z_hat = r.z_raw;
      d.gate = Gate::Bypassed;
      d.provenance = Provenance::Encoder;
    } else if (!opt.use_memory) {
      r.z_hat = a.z_bar;
      d.gate = Gate::Bypassed;
      d.provenance = Provenance::Anchor;
    } else {
      TscResult t = tsc(a.z_bar, a.confidence, pred, m.check.rho);
      r.z_hat = std::move(t.z);
      d.gate = !pred ? Gate::Bootstrap : t.accepted ? Gate::Accepted : Gate::Rejected;
      d.provenance = t.accepted ? Provenance::Anchor : Provenance::Memory;
    }
  } else if (pred) {
    r.z_hat = *pred;
    d.gate = Gate::Absent;
    d.provenance = Provenance::Memory;
  } else if (state.z_hat) {
    r.z_hat = *state.z_hat;
    d.gate = Gate::Absent;
    d.provenance = Provenance::Hold;
  } else {
    d.anchor_index = centroid_anchor(m.anchors);
    r.z_hat = m.anchors.latent(d.anchor_index);
    d.gate = Gate::Absent;
    d.provenance = Provenance::Anchor;
  }

  state.z_hat = r.z_hat;
  state.prev_action = a_prev;
  ++state.step;
  state.diagnostics.push_back(d);
  if (state.max_diagnostics && state.diagnostics.size() > state.max_diagnostics) state.diagnostics.pop_front();
  return r;
}

// ---- corruption ----

void CorruptionSpec::validate() const {
  WMNAV_REQUIRE(drop_rate >= 0 && drop_rate <= 1, "corruption: drop_rate outside [0,1]");
  WMNAV_REQUIRE(garble_rate >= 0 && garble_rate <= 1, "corruption: garble_rate outside [0,1]");
  WMNAV_REQUIRE(delay_every >= 0, "corruption: delay_every must be non-negative");
}

FpvImage noise_image(int height, int width, Rng& rng) {
  FpvImage img;
  img.height = height;
  img.width = width;
  img.rgb.resize(static_cast<std::size_t>(height) * width * 3);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& p : img.rgb) p = static_cast<std::uint8_t>(u(rng));
  return img;
}

CorruptedFrame corrupt_frame(const FpvImage& frame, long t, const CorruptionSpec& spec, Rng& rng) {
  // Both draws happen for every frame so the stream of decisions does not
  // depend on the outcome of earlier frames.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u_drop = u(rng), u_garble = u(rng);
  CorruptedFrame out;
  if (spec.delay_every > 0 && (t + 1) % spec.delay_every == 0) {
    out.fate = FrameFate::Delayed;
  } else if (u_drop < spec.drop_rate) {
    out.fate = FrameFate::Dropped;
  } else if (u_garble < spec.garble_rate) {
    out.fate = FrameFate::Garbled;
    out.image = noise_image(frame.height, frame.width, rng);
  } else {
    out.image = frame;
  }
  return out;
}

std::vector<CorruptedFrame> inject_corruption(const std::vector<FpvImage>& frames, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<CorruptedFrame> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) out.push_back(corrupt_frame(frames[t], static_cast<long>(t), spec, rng));
  return out;
}

// ---- evaluation ----

namespace {

struct Accumulator {
  std::array<double, kNumClasses> acc{}, ce{}, mse{};
  std::array<int, kNumClasses> n{};

  void add(RoadClass truth, bool correct, double c, double m) {
    const auto k = static_cast<std::size_t>(truth);
    acc[k] += correct;
    ce[k] += c;
    mse[k] += m;
    ++n[k];
  }

  EvalReport report() const {
    EvalReport r;
    double ta = 0, tc = 0, tm = 0;
    int total = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      ClassStats& s = r.per_class[k];
      s.count = n[k];
      s.present = n[k] > 0;
      if (s.present) s.acc = acc[k] / n[k], s.ce = ce[k] / n[k], s.mse = mse[k] / n[k];
      ta += acc[k], tc += ce[k], tm += mse[k], total += n[k];
    }
    r.overall.count = total;
    r.overall.present = total > 0;
    if (total) r.overall.acc = ta / total, r.overall.ce = tc / total, r.overall.mse = tm / total;
    return r;
  }
};

}  // namespace

void write_report_csv(const EvalReport& r, const fs::path& path, bool with_image_metrics) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "class,acc,ce,mse,present\n";
  auto row = [&](const std::string& name, const ClassStats& s) {
    if (!s.present) {
      out << name << ",-,-,-,0\n";
      return;
    }
    char buf[160];
    if (with_image_metrics)
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", s.acc, s.ce, s.mse);
    else
      std::snprintf(buf, sizeof buf, "%.6f,-,-", s.acc);
    out << name << ',' << buf << ",1\n";
  };
  for (int k = 0; k < kNumClasses; ++k) row(class_names()[static_cast<std::size_t>(k)], r.per_class[static_cast<std::size_t>(k)]);
  row("overall", r.overall);
}

EvalReport accuracy_report(const std::vector<RoadClass>& predicted, const std::vector<RoadClass>& truth) {
  WMNAV_REQUIRE(predicted.size() == truth.size(), "accuracy_report: size mismatch");
  Accumulator acc;
  for (std::size_t i = 0; i < truth.size(); ++i) acc.add(truth[i], predicted[i] == truth[i], 0, 0);
  return acc.report();
}

EvalReport eval_embeddings(const Tensor& z, const std::vector<RoadClass>& truth, const AnchorSet& anchors, bool unit_search) {
  const auto idx = nearest_anchors(z, anchors, unit_search);
  WMNAV_REQUIRE(idx.size() == truth.size(), "eval_embeddings: row count does not match labels");
  std::vector<RoadClass> pred;
  pred.reserve(idx.size());
  for (int i : idx) pred.push_back(anchors.labels[static_cast<std::size_t>(i)]);
  return accuracy_report(pred, truth);
}

EvalReport eval_classification(FpvEncoder& enc, const AnchorSet& anchors, const std::vector<LabeledView>& views,
                               const StateCheckConfig& check) {
  std::vector<const FpvImage*> imgs;
  std::vector<RoadClass> truth;
  for (const auto& v : views) imgs.push_back(&v.fpv), truth.push_back(v.cls);
  return eval_embeddings(enc.embed_batch(imgs), truth, anchors, check.unit_search);
}

EvalReport eval_baseline(BaselineClassifier& cls, const std::vector<LabeledView>& views) {
  std::vector<const FpvImage*> imgs;
  std::vector<RoadClass> truth;
  for (const auto& v : views) imgs.push_back(&v.fpv), truth.push_back(v.cls);
  return accuracy_report(cls.classify_batch(imgs), truth);
}

std::pair<double, double> image_metrics(const float* probs, const BevImage& truth) {
  constexpr double eps = 1e-6;
  const std::size_t n = truth.pixels.size();
  WMNAV_REQUIRE(n > 0, "image_metrics: empty image");
  double ce = 0, se = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(probs[i]), eps, 1.0 - eps);
    const double y = truth.pixels[i];
    ce -= y * std::log(p) + (1 - y) * std::log(1 - p);
    se += (p - y) * (p - y);
  }
  return {ce / static_cast<double>(n), se / static_cast<double>(n)};
}

namespace {

// Class of the anchor nearest to an output latent. Raw encoder outputs use
// the encoder's own search geometry; anchors and memory predictions live in
// the VAE latent space.
RoadClass output_class(const std::vector<float>& z, const StepDiagnostics& d, Models& m) {
  const bool unit = d.provenance == Provenance::Encoder && m.check.unit_search;
  return m.anchors.labels[static_cast<std::size_t>(asc(z, m.anchors, ConfidenceMetric::NegDistance, unit).index)];
}

Tensor stack_rows(const std::vector<std::vector<float>>& rows) {
  Tensor z({static_cast<int>(rows.size()), kLatentDim});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), z.data() + i * kLatentDim);
  return z;
}

}  // namespace

EvalReport eval_sequence(Models& m, const Trajectory& traj, const PipelineOptions& opt, const CorruptionSpec& corruption,
                         std::uint64_t seed, std::vector<SequenceFrame>* frames) {
  WMNAV_REQUIRE(!traj.records.empty(), "eval_sequence: empty trajectory");
  for (std::size_t t = 1; t < traj.records.size(); ++t)
    WMNAV_REQUIRE(traj.records[t].t > traj.records[t - 1].t, "eval_sequence: records out of temporal order");
  corruption.validate();
  Rng rng(seed);
  PipelineState state = initial_pipeline_state(m);
  std::vector<SequenceFrame> out(traj.records.size());
  std::vector<std::vector<float>> zs;
  for (std::size_t t = 0; t < traj.records.size(); ++t) {
    const auto& rec = traj.records[t];
    const CorruptedFrame cf = corrupt_frame(rec.fpv, static_cast<long>(t), corruption, rng);
    const Action a_prev = t ? traj.records[t - 1].action : Action{};
    AdvanceResult r = advance_state(cf.image ? &*cf.image : nullptr, a_prev, state, m, opt);
    SequenceFrame& f = out[t];
    f.truth = rec.cls;
    f.predicted = output_class(r.z_hat, r.diag, m);
    f.diag = r.diag;
    f.fate = cf.fate;
    f.z_hat = r.z_hat;
    zs.push_back(std::move(r.z_hat));
  }
  const Tensor probs = m.vae.decode(stack_rows(zs));
  const std::size_t pix = probs.size() / zs.size();
  Accumulator acc;
  for (std::size_t t = 0; t < out.size(); ++t) {
    auto [ce, mse] = image_metrics(probs.data() + t * pix, traj.records[t].bev);
    out[t].ce = ce, out[t].mse = mse;
    acc.add(out[t].truth, out[t].predicted == out[t].truth, ce, mse);
  }
  if (frames) *frames = std::move(out);
  return acc.report();
}

// ---- closed loop ----

EpisodeLog run_episode(const NavTask& task, Models& m, const Policy& policy, const EpisodeConfig& cfg,
                       const CorruptionSpec& corruption, Rng& rng) {
  corruption.validate();
  if (cfg.frame_dir) fs::create_directories(*cfg.frame_dir);
  const std::uint64_t frame_seed = rng();
  PipelineState state = initial_pipeline_state(m);
  EpisodeLog log;
  Action a_prev;
  EpisodeRecord pending;

  // The environment asks for the latent exactly once per visited pose; that
  // request drives one pipeline step.
  LatentSource latent = [&](const TileMap& map, const RobotPose& pose) {
    const long t = state.step;
    const FpvImage fpv = render_fpv(map, pose, cfg.style, frame_seed + static_cast<std::uint64_t>(t), cfg.camera);
    const CorruptedFrame cf = corrupt_frame(fpv, t, corruption, rng);
    if (cfg.frame_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%06ld", t);
      write_ppm(*cfg.frame_dir / (std::string(name) + ".ppm"), cf.image ? *cf.image : fpv);
      write_pgm(*cfg.frame_dir / (std::string(name) + ".pgm"), render_bev(map, pose));
    }
    AdvanceResult r = advance_state(cf.image ? &*cf.image : nullptr, a_prev, state, m, cfg.pipeline);
    pending = EpisodeRecord{};
    pending.pose = pose;
    pending.z_hat = r.z_hat;
    pending.diag = r.diag;
    pending.fate = cf.fate;
    pending.truth = map.on_road(pose.x, pose.y) ? local_class(map, pose) : RoadClass::Straight;
    return r.z_hat;
  };

  NavEnv env(latent, cfg.ppo);
  std::vector<float> s = env.reset(task);
  for (;;) {
    const Action a = policy(s);
    EpisodeRecord rec = pending;
    rec.action = a;
    a_prev = a;
    NavEnv::Step st = env.step(a);
    rec.reward = st.reward;
    log.records.push_back(std::move(rec));
    s = std::move(st.state);
    if (st.done) {
      log.outcome = st.outcome;
      break;
    }
  }
  log.waypoints = env.waypoints_reached();
  log.waypoints_total = static_cast<int>(env.task().waypoints.size());
  return log;
}

void write_episode_csv(const EpisodeLog& log, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "t,x,y,heading,throttle,steer,anchor,confidence,gate,provenance,fate,reward,class\n";
  char buf[256];
  for (std::size_t t = 0; t < log.records.size(); ++t) {
    const auto& r = log.records[t];
    static constexpr const char* kFate[] = {"clean", "dropped", "garbled", "delayed"};
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%.6f,%s,%s,%s,%.6f,%s\n", t, r.pose.x, r.pose.y,
                  r.pose.heading, r.action.throttle, r.action.steer, r.diag.anchor_index, r.diag.confidence,
                  gate_name(r.diag.gate).c_str(), provenance_name(r.diag.provenance).c_str(),
                  kFate[static_cast<int>(r.fate)], r.reward, class_names()[static_cast<std::size_t>(r.truth)].c_str());
    out << buf;
  }
}

}  // namespace wmnav

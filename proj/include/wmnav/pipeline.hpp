#pragma once

// Closed-loop runtime: observation -> embedding -> anchor check -> temporal
// check -> memory -> policy, plus the evaluation harnesses built on it.

#include <array>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wmnav/encoder.hpp"
#include "wmnav/memory.hpp"
#include "wmnav/policy.hpp"
#include "wmnav/statecheck.hpp"

namespace wmnav {

/// Frozen models shared by pipeline instances.
struct Models {
  BevVae vae;
  FpvEncoder encoder;
  MdnLstm memory;
  AnchorSet anchors;
  StateCheckConfig check;
};

/// Default state-check settings for an encoder: cosine confidence and unit
/// search for cosine-trained encoders, neg-distance otherwise.
StateCheckConfig default_check_config(LossMode mode, float rho);

enum class Gate : std::uint8_t { Accepted, Rejected, Bootstrap, Absent, Bypassed };
std::string gate_name(Gate g);
/// Where an output latent came from: an anchor (ASC result kept by the gate),
/// the memory prediction, the raw encoder output (checks disabled), or the
/// previous output held over an absent frame (memory disabled).
enum class Provenance : std::uint8_t { Anchor, Memory, Encoder, Hold };
std::string provenance_name(Provenance p);

struct StepDiagnostics {
  int anchor_index = -1;
  float confidence = 0;
  float anchor_distance = 0;
  Gate gate = Gate::Absent;
  Provenance provenance = Provenance::Anchor;
};

struct PipelineOptions {
  bool use_asc = true;
  bool use_memory = true;  // memory prediction feeds the temporal gate and absent frames
};

struct PipelineState {
  MemoryHidden hidden;
  std::optional<std::vector<float>> z_hat;  // previous output
  Action prev_action;
  long step = 0;
  std::deque<StepDiagnostics> diagnostics;
  std::size_t max_diagnostics = 0;  // ring capacity, 0 = keep all
};

PipelineState initial_pipeline_state(Models& m);

struct AdvanceResult {
  std::vector<float> z_hat;
  StepDiagnostics diag;
  std::vector<float> z_raw;  // encoder output before replacement (empty when absent)
};

/// One pipeline step. With memory, the recurrent state first advances on
/// (previous output, previous action) to predict the current latent; an
/// observation is then embedded, snapped to its anchor, and gated against that
/// prediction. An absent observation yields the prediction itself. On the very
/// first step with no observation the anchor nearest the anchor centroid is used.
AdvanceResult advance_state(const FpvImage* o, const Action& a_prev, PipelineState& state, Models& m,
                            const PipelineOptions& opt = {});

// Corruption ---------------------------------------------------------------

struct CorruptionSpec {
  double drop_rate = 0;
  double garble_rate = 0;
  int delay_every = 0;  // every n-th frame arrives too late (absent); 0 disables
  void validate() const;
};

enum class FrameFate : std::uint8_t { Clean, Dropped, Garbled, Delayed };

struct CorruptedFrame {
  std::optional<FpvImage> image;
  FrameFate fate = FrameFate::Clean;
};

/// Uniform-noise image with the given shape.
FpvImage noise_image(int height, int width, Rng& rng);
/// Per frame: delayed by pattern, else dropped with drop_rate, else garbled with garble_rate.
std::vector<CorruptedFrame> inject_corruption(const std::vector<FpvImage>& frames, const CorruptionSpec& spec, Rng& rng);
CorruptedFrame corrupt_frame(const FpvImage& frame, long t, const CorruptionSpec& spec, Rng& rng);

// Evaluation ---------------------------------------------------------------

struct ClassStats {
  double acc = 0, ce = 0, mse = 0;
  int count = 0;
  bool present = false;
};

struct EvalReport {
  std::array<ClassStats, kNumClasses> per_class{};
  ClassStats overall;
};

/// Columns class,acc,ce,mse,present; absent classes carry "-" values.
void write_report_csv(const EvalReport& r, const std::filesystem::path& path, bool with_image_metrics = true);

/// Accuracy report from predicted and true classes.
EvalReport accuracy_report(const std::vector<RoadClass>& predicted, const std::vector<RoadClass>& truth);

/// Predicted class = class of the nearest anchor to each embedding row.
EvalReport eval_embeddings(const Tensor& z, const std::vector<RoadClass>& truth, const AnchorSet& anchors,
                           bool unit_search);
EvalReport eval_classification(FpvEncoder& enc, const AnchorSet& anchors, const std::vector<LabeledView>& views,
                               const StateCheckConfig& check);
EvalReport eval_baseline(BaselineClassifier& cls, const std::vector<LabeledView>& views);

/// Per-frame output of a sequence evaluation.
struct SequenceFrame {
  std::vector<float> z_hat;
  RoadClass predicted = RoadClass::Straight;
  RoadClass truth = RoadClass::Straight;
  double ce = 0, mse = 0;
  StepDiagnostics diag;
  FrameFate fate = FrameFate::Clean;
};

/// Runs the pipeline over a recorded trajectory (actions from the record)
/// and scores decoded predictions against the ground-truth BEV.
EvalReport eval_sequence(Models& m, const Trajectory& traj, const PipelineOptions& opt, const CorruptionSpec& corruption,
                         std::uint64_t seed, std::vector<SequenceFrame>* frames = nullptr);

/// Pixel-mean binary cross-entropy and squared error of probabilities against a BEV.
std::pair<double, double> image_metrics(const float* probs, const BevImage& truth);

// Closed loop --------------------------------------------------------------

struct EpisodeRecord {
  RobotPose pose;
  Action action;
  std::vector<float> z_hat;
  StepDiagnostics diag;
  float reward = 0;
  RoadClass truth = RoadClass::Straight;
  FrameFate fate = FrameFate::Clean;
};

struct EpisodeLog {
  std::vector<EpisodeRecord> records;
  Outcome outcome = Outcome::Running;
  int waypoints = 0;
  int waypoints_total = 0;  // course length after waypoints inside the start radius are dropped
};

using Policy = std::function<Action(const std::vector<float>& state)>;

struct EpisodeConfig {
  PpoConfig ppo;  // task, reward and timeout settings
  RenderStyle style;
  PipelineOptions pipeline;
  CameraSpec camera;
  /// When set, FPV frames are written as frame_%06d.ppm with BEV frame_%06d.pgm.
  std::optional<std::filesystem::path> frame_dir;
};

/// Closed loop o_t -> embed -> asc -> tsc -> memory -> policy -> env step.
EpisodeLog run_episode(const NavTask& task, Models& m, const Policy& policy, const EpisodeConfig& cfg,
                       const CorruptionSpec& corruption, Rng& rng);

void write_episode_csv(const EpisodeLog& log, const std::filesystem::path& path);

}  // namespace wmnav

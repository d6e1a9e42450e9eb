#pragma once

// Run configuration: one JSON document with a section per module. Every key
// is optional; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "wmnav/encoder.hpp"
#include "wmnav/memory.hpp"
#include "wmnav/pipeline.hpp"
#include "wmnav/policy.hpp"
#include "wmnav/vae.hpp"

namespace wmnav {

struct DataConfig {
  int map_size = 6;
  int vae_images = 3000;       // BEV-only views for the VAE
  int train_views = 3000;      // labelled FPV/BEV views, train styles
  int test_views = 600;        // held-out views per style family
  int train_sequences = 200;   // driving sequences for the memory model
  int test_sequences = 5;      // held-out sequences per style family
  int sequence_length = 128;
};

struct StateCheckSettings {
  int anchors = kDefaultAnchorCount;
  /// Gate threshold; calibrated from clean held-out frames when absent.
  std::optional<float> rho;
  double rho_percentile = 5.0;
};

struct PolicySettings {
  PpoConfig ppo;
  double corridor_length_m = 24.0;
  long max_steps = 200000;
  int eval_episodes = 100;        // final deterministic evaluation
  int check_every = 5;            // updates between early-stop checks, 0 disables them
  int check_episodes = 20;
  double stop_success = 0.95;     // early-stop once a check reaches this success rate
  bool stop_at_milestone = false; // early-stop once the training curve reaches the milestone
};

struct EvalSettings {
  std::string encoder_mode = "mse";  // which trained encoder the runtime uses
  bool use_asc = true;
  bool use_memory = true;
  int episodes = 1;
  std::string style_family = "holdout";  // rendering styles used by rollout
  bool dump_frames = false;
};

struct AppConfig {
  DataConfig data;
  VaeConfig vae;
  EncoderConfig encoder;
  MemoryConfig memory;
  StateCheckSettings statecheck;
  PolicySettings policy;
  EvalSettings eval;
  CorruptionSpec corruption;
};

/// Parses and validates a config document. Throws ConfigError.
AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::filesystem::path& path);
/// Full effective configuration, every key present.
std::string dump_config(const AppConfig& cfg);

}  // namespace wmnav

#pragma once

// One function per command-line verb. Each reads its inputs from and writes
// its outputs to the workspace directory, and returns a JSON summary that is
// also saved as <workspace>/<verb>.json.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include "json.hpp"
#include <optional>

#include "wmnav/config.hpp"

namespace wmnav {

struct CommandContext {
  AppConfig cfg;
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";
  std::ostream* log = nullptr;  // progress lines; silent when null
};

/// Fixed file layout inside a workspace.
struct Workspace {
  std::filesystem::path root;
  std::filesystem::path data(const std::string& set) const { return root / "data" / set; }
  std::filesystem::path vae() const { return root / "vae.ckpt"; }
  std::filesystem::path encoder(LossMode m) const { return root / ("encoder_" + loss_mode_name(m) + ".ckpt"); }
  std::filesystem::path baseline() const { return root / "baseline.ckpt"; }
  std::filesystem::path memory() const { return root / "memory.ckpt"; }
  std::filesystem::path policy() const { return root / "policy.ckpt"; }
  std::filesystem::path anchors() const { return root / "anchors"; }
};

// Dataset names under data/.
inline constexpr const char* kTrainViews = "train_views";
inline constexpr const char* kTestViewsTrain = "test_views_train";
inline constexpr const char* kTestViewsHoldout = "test_views_holdout";
inline constexpr const char* kTrainSeqs = "train_seqs";
inline constexpr const char* kTestSeqsTrain = "test_seqs_train";
inline constexpr const char* kTestSeqsHoldout = "test_seqs_holdout";

using Summary = nlohmann::json;

Summary cmd_gen_data(const CommandContext& ctx);
Summary cmd_train_vae(const CommandContext& ctx);
Summary cmd_gen_anchors(const CommandContext& ctx);
/// Trains the encoder with `mode`, or the configured mode when absent.
Summary cmd_train_encoder(const CommandContext& ctx, std::optional<LossMode> mode = {});
Summary cmd_train_baseline(const CommandContext& ctx);
Summary cmd_train_memory(const CommandContext& ctx);
Summary cmd_train_policy(const CommandContext& ctx);
Summary cmd_eval_class(const CommandContext& ctx);
Summary cmd_eval_seq(const CommandContext& ctx);
Summary cmd_rollout(const CommandContext& ctx);
Summary cmd_check_grads(const CommandContext& ctx, int seeds = 100);

// Helpers shared with tests.
std::vector<LabeledView> views_from_dataset(const std::vector<Trajectory>& seqs);
std::vector<Trajectory> views_to_dataset(const std::vector<LabeledView>& views);
/// Ground-truth latent sequences: VAE means of each record's BEV plus its actions.
std::vector<LatentSequence> latent_sequences(BevVae& vae, const std::vector<Trajectory>& seqs);
/// Loads VAE, encoder (eval.encoder_mode), memory and anchors, and sets the
/// gate threshold (configured, or calibrated on clean held-out train-style views).
Models load_models(const CommandContext& ctx);

}  // namespace wmnav

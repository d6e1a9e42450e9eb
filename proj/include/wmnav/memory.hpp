#pragma once

// LSTM memory with a mixture-density head over the next latent state.

#include <optional>
#include <vector>

#include "wmnav/checkpoint.hpp"
#include "wmnav/vae.hpp"

namespace wmnav {

struct MemoryConfig {
  int hidden = 128;
  int mixtures = 5;
  int chunk = 32;  // truncated backpropagation length
  int epochs = 30;
  int batch_size = 16;
  float lr = 1e-3f;
  float grad_clip = 5.0f;
};

struct MemoryHidden {
  std::vector<float> h, c;
};

struct MdnOutput {
  std::vector<float> weights;     // K, sums to 1
  std::vector<float> means;       // K x 32, row-major
  std::vector<float> sigmas;      // K
  std::vector<float> log_weights; // K
  std::vector<float> log_sigmas;  // K

  int components() const { return static_cast<int>(weights.size()); }
  std::vector<float> mean(int j) const;
};

/// Builds an MdnOutput from raw head values (mixture logits, means, log scales).
MdnOutput make_mdn_output(const std::vector<float>& logits, const std::vector<float>& means,
                          const std::vector<float>& log_sigmas);

/// One sequence of ground-truth latents with the action taken at each step.
struct LatentSequence {
  Tensor latents;               // [T, 32]
  std::vector<Action> actions;  // T
};

class MdnLstm {
 public:
  MdnLstm() = default;
  MdnLstm(const MemoryConfig& cfg, Rng& rng);

  const MemoryConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();

  struct StepVars {
    Var h, c, logits, means, log_sigmas;
  };
  /// z [N,32], a [N,2], h/c [N,H]
  StepVars step(Tape& t, Var z, Var a, Var h, Var c);

  MemoryHidden initial_hidden() const;
  std::pair<MemoryHidden, MdnOutput> mdn_step(const MemoryHidden& h, const std::vector<float>& z_prev,
                                              const Action& a_prev);

  NamedTensors state();
  void load(const NamedTensors& tensors);

 private:
  MemoryConfig cfg_;
  nn::LstmCell cell_;
  nn::Linear head_;
};

/// Mean over rows of -log sum_j theta_j N(target | mu_j, sigma_j^2 I).
/// logits [N,K], means [N,K*32], log_sigmas [N,K], target [N,32].
Var mdn_nll_terms(Var logits, Var means, Var log_sigmas, const Tensor& target);
double mdn_nll(const MdnOutput& out, const std::vector<float>& z_target);

enum class SelectMode : std::uint8_t { Mode, Sample };
/// Mode: mean of the highest-weight component (lowest index on ties).
/// Sample: component by weight, then a Gaussian draw. Sampling needs an rng.
std::vector<float> mdn_select(const MdnOutput& out, SelectMode mode, Rng* rng = nullptr);

/// Rolls the memory forward on its own mode predictions, one per action.
std::vector<std::vector<float>> interpolate(MdnLstm& model, MemoryHidden h, std::vector<float> z_last,
                                            const std::vector<Action>& actions);

struct MemoryCurve {
  std::vector<double> epoch_nll;
  int skipped = 0;
};

/// Teacher-forced training on ground-truth latents. Sequences shorter than 2
/// are skipped; throws ContractError if nothing remains.
MdnLstm train_memory(const std::vector<LatentSequence>& data, const MemoryConfig& cfg, std::uint64_t seed,
                     MemoryCurve* curve = nullptr);

/// Mean per-step NLL of a trained model on sequences (teacher forced).
double evaluate_memory_nll(MdnLstm& model, const std::vector<LatentSequence>& data);

/// Copy-last baseline: z_{t+1} ~ N(z_t + m, s^2 I) with m and s^2 fitted to residuals.
struct CopyLastBaseline {
  std::vector<float> mean_residual;
  double variance = 1.0;
  static CopyLastBaseline fit(const std::vector<LatentSequence>& data);
  double nll(const std::vector<LatentSequence>& data) const;
};

}  // namespace wmnav

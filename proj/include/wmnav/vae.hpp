#pragma once

// Convolutional VAE over binary BEV rasters. The 32-dim mean of the encoder
// is the shared latent space used by every downstream model.

#include <array>
#include <vector>

#include "wmnav/checkpoint.hpp"
#include "wmnav/nn.hpp"
#include "wmnav/world.hpp"

namespace wmnav {

inline constexpr int kLatentDim = 32;

struct GaussianParams {
  std::vector<float> mu;
  std::vector<float> sigma;
};

struct VaeConfig {
  int latent_dim = kLatentDim;
  float beta = 1.0f;
  std::array<int, 3> widths{16, 32, 32};
  int image_size = 64;
  int epochs = 20;
  int batch_size = 32;
  float lr = 1e-3f;
};

/// [N,1,H,W] tensor with road = 1.
Tensor bev_batch(const std::vector<const BevImage*>& images);
Tensor bev_batch(const std::vector<BevImage>& images);

class BevVae {
 public:
  BevVae() = default;
  BevVae(const VaeConfig& cfg, Rng& rng);

  const VaeConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();

  /// x [N,1,H,W] -> (mu [N,D], log sigma [N,D])
  std::pair<Var, Var> encode(Tape& t, Var x);
  /// z [N,D] -> logits [N,1,H,W]
  Var decode_logits(Tape& t, Var z);

  GaussianParams encode(const BevImage& x);
  /// Row-major [N,D] means of a batch.
  Tensor encode_mean(const std::vector<const BevImage*>& xs);
  std::vector<float> embed(const BevImage& x) { return encode(x).mu; }
  /// Per-pixel road probabilities, [N,H*W].
  Tensor decode(const Tensor& z);

  NamedTensors state();
  void load(const NamedTensors& tensors);

 private:
  VaeConfig cfg_;
  nn::Conv2d e1_, e2_, e3_;
  nn::Linear e_fc_;
  nn::Linear d_fc_;
  nn::ConvTranspose2d d1_, d2_, d3_;
  int feat_ = 0;  // spatial size after the encoder convs
};

std::vector<float> sample_latent(const GaussianParams& g, Rng& rng);

/// sum_i BCE(x_i, sigmoid(logits_i)) + beta * sum KL(N(mu, sigma^2) || N(0, I)).
Var vae_loss_terms(Var logits, Var mu, Var log_sigma, const Tensor& targets, float beta);
/// KL part alone, summed over batch and dims.
Var gaussian_kl(Var mu, Var log_sigma);
/// Full forward pass with a reparameterised sample drawn from rng.
Var vae_loss(Tape& t, BevVae& model, const Tensor& batch, float beta, Rng& rng);

struct TrainCurve {
  std::vector<double> epoch_loss;
};

BevVae train_vae(const std::vector<BevImage>& data, const VaeConfig& cfg, std::uint64_t seed,
                 TrainCurve* curve = nullptr);

/// Intersection over union of thresholded (p >= 0.5) predictions; 1 when both are empty.
double bev_iou(const float* probs, const BevImage& truth);

}  // namespace wmnav

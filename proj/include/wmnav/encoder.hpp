#pragma once

// FPV image encoder aligned to the BEV latent space, and the 6-way baseline
// classifier that shares its convolutional trunk.

#include <array>
#include <string>
#include <vector>

#include "wmnav/checkpoint.hpp"
#include "wmnav/dataset.hpp"
#include "wmnav/vae.hpp"

namespace wmnav {

enum class LossMode : std::uint8_t { CosineInfoNce, Mse };
std::string loss_mode_name(LossMode m);
LossMode loss_mode_from_name(const std::string& s);

struct EncoderConfig {
  LossMode mode = LossMode::CosineInfoNce;
  float tau = 0.1f;
  int batch_size = 64;
  int epochs = 15;
  float lr = 1e-3f;
  std::array<int, 4> widths{16, 32, 64, 64};
  int hidden = 384;
  int image_size = 64;
};

/// [N,3,H,W] tensor scaled to [0,1].
Tensor fpv_batch(const std::vector<const FpvImage*>& images);

/// Four stride-2 3x3 convolutions followed by one dense layer.
class ConvTrunk {
 public:
  ConvTrunk() = default;
  ConvTrunk(const std::string& prefix, const EncoderConfig& cfg, Rng& rng);
  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);
  int features() const { return hidden_; }

 private:
  std::array<nn::Conv2d, 4> convs_;
  nn::Linear fc_;
  int flat_ = 0, hidden_ = 0, image_size_ = 0;
};

class FpvEncoder {
 public:
  FpvEncoder() = default;
  FpvEncoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  LossMode mode() const { return cfg_.mode; }
  std::vector<Parameter*> parameters();

  /// x [N,3,H,W] -> raw embeddings [N,32]
  Var forward(Tape& t, Var x);
  std::vector<float> embed(const FpvImage& o);
  /// Raw embeddings of a set of images, [N,32].
  Tensor embed_batch(const std::vector<const FpvImage*>& images);

  NamedTensors state();
  void load(const NamedTensors& tensors);

 private:
  EncoderConfig cfg_;
  ConvTrunk trunk_;
  nn::Linear out_;
};

std::vector<float> l2_normalized(std::vector<float> v);

/// Symmetric InfoNCE over cosine similarities; rows of Z and Zp are positives.
/// Returns the sum over the batch of the mean of both directional terms.
Var contrastive_loss_cosine(Var z, Var zp, float tau);
/// Batch mean of the Euclidean distance between paired rows.
Var contrastive_loss_mse(Var z, Var zp);
Var encoder_loss(Var z, Var zp, const EncoderConfig& cfg);

struct EncoderCurve {
  std::vector<double> epoch_loss;  // mean loss per batch
};

/// BEV side of each view is embedded once by the frozen VAE mean.
FpvEncoder train_encoder(const std::vector<LabeledView>& data, BevVae& vae, const EncoderConfig& cfg,
                         std::uint64_t seed, EncoderCurve* curve = nullptr);

class BaselineClassifier {
 public:
  BaselineClassifier() = default;
  BaselineClassifier(const EncoderConfig& cfg, Rng& rng);

  std::vector<Parameter*> parameters();
  /// x [N,3,H,W] -> logits [N,6]
  Var forward(Tape& t, Var x);
  RoadClass classify(const FpvImage& o);
  std::vector<RoadClass> classify_batch(const std::vector<const FpvImage*>& images);

  NamedTensors state();
  void load(const NamedTensors& tensors);

 private:
  EncoderConfig cfg_;
  ConvTrunk trunk_;
  nn::Linear head_;
};

/// Cross-entropy training on class labels. Requires at least two classes present.
BaselineClassifier train_baseline_classifier(const std::vector<LabeledView>& data, const EncoderConfig& cfg,
                                             std::uint64_t seed, EncoderCurve* curve = nullptr);

}  // namespace wmnav

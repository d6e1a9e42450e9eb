#include "wmnav/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "wmnav/error.hpp"
#include "wmnav/optim.hpp"

namespace wmnav {

std::string loss_mode_name(LossMode m) { return m == LossMode::CosineInfoNce ? "cosine-infonce" : "mse"; }

LossMode loss_mode_from_name(const std::string& s) {
  if (s == "cosine-infonce" || s == "cosine") return LossMode::CosineInfoNce;
  if (s == "mse") return LossMode::Mse;
  throw ContractError("unknown loss mode '" + s + "'");
}

Tensor fpv_batch(const std::vector<const FpvImage*>& images) {
  WMNAV_REQUIRE(!images.empty(), "fpv_batch: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor t({static_cast<int>(images.size()), 3, h, w});
  float* out = t.data();
  for (const FpvImage* img : images) {
    WMNAV_REQUIRE(img->height == h && img->width == w && img->rgb.size() == plane * 3,
                  "fpv_batch: inconsistent image shape");
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) out[c * plane + p] = img->rgb[p * 3 + c] * (1.0f / 255.0f);
    out += plane * 3;
  }
  return t;
}

namespace {

Tensor config_tensor(const EncoderConfig& c) {
  return Tensor({9}, std::vector<float>{static_cast<float>(c.mode), c.tau, static_cast<float>(c.widths[0]),
                                        static_cast<float>(c.widths[1]), static_cast<float>(c.widths[2]),
                                        static_cast<float>(c.widths[3]), static_cast<float>(c.hidden),
                                        static_cast<float>(c.image_size), 0.0f});
}

EncoderConfig config_from(const Tensor& t, EncoderConfig base) {
  if (t.size() != 9) throw IntegrityError("encoder config tensor has the wrong length");
  base.mode = static_cast<LossMode>(static_cast<int>(t[0]));
  base.tau = t[1];
  for (int i = 0; i < 4; ++i) base.widths[static_cast<std::size_t>(i)] = static_cast<int>(t[static_cast<std::size_t>(2 + i)]);
  base.hidden = static_cast<int>(t[6]);
  base.image_size = static_cast<int>(t[7]);
  return base;
}

std::vector<const FpvImage*> gather(const std::vector<LabeledView>& data, const std::vector<std::size_t>& order,
                                    std::size_t b, std::size_t e) {
  std::vector<const FpvImage*> out;
  for (std::size_t i = b; i < e; ++i) out.push_back(&data[order[i]].fpv);
  return out;
}

template <typename F>
Tensor batched_forward(const std::vector<const FpvImage*>& images, int cols, F&& forward) {
  Tensor out({static_cast<int>(images.size()), cols});
  constexpr std::size_t kChunk = 128;
  for (std::size_t b = 0; b < images.size(); b += kChunk) {
    const std::size_t e = std::min(images.size(), b + kChunk);
    Tape t;
    Var y = forward(t, t.constant(fpv_batch({images.begin() + static_cast<std::ptrdiff_t>(b), images.begin() + static_cast<std::ptrdiff_t>(e)})));
    std::copy(y.value().vec().begin(), y.value().vec().end(), out.data() + b * static_cast<std::size_t>(cols));
  }
  return out;
}

}  // namespace

ConvTrunk::ConvTrunk(const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
    : hidden_(cfg.hidden), image_size_(cfg.image_size) {
  WMNAV_REQUIRE(cfg.image_size % 16 == 0, "encoder image size must be divisible by 16");
  int in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    convs_[i] = nn::Conv2d(prefix + ".c" + std::to_string(i + 1), in, cfg.widths[i], 3, 2, 1, rng);
    in = cfg.widths[i];
  }
  const int s = cfg.image_size / 16;
  flat_ = in * s * s;
  fc_ = nn::Linear(prefix + ".fc", flat_, cfg.hidden, rng);
}

Var ConvTrunk::operator()(Tape& t, Var x) {
  const Shape s = x.shape();
  WMNAV_REQUIRE(s.size() == 4 && s[1] == 3 && s[2] == image_size_ && s[3] == image_size_,
                "FPV input: expected [N,3," + std::to_string(image_size_) + "," + std::to_string(image_size_) +
                    "], got " + shape_str(s));
  Var h = x;
  for (auto& c : convs_) h = ad::relu(c(t, h));
  return ad::relu(fc_(t, ad::reshape(h, {s[0], flat_})));
}

void ConvTrunk::collect(std::vector<Parameter*>& out) {
  for (auto& c : convs_) c.collect(out);
  fc_.collect(out);
}

FpvEncoder::FpvEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  WMNAV_REQUIRE(cfg.tau > 0, "encoder tau must be positive");
  trunk_ = ConvTrunk("enc", cfg, rng);
  out_ = nn::Linear("enc.out", cfg.hidden, kLatentDim, rng, 0.5f);
}

std::vector<Parameter*> FpvEncoder::parameters() {
  std::vector<Parameter*> out;
  trunk_.collect(out);
  out_.collect(out);
  return out;
}

Var FpvEncoder::forward(Tape& t, Var x) { return out_(t, trunk_(t, x)); }

std::vector<float> FpvEncoder::embed(const FpvImage& o) {
  Tape t;
  return forward(t, t.constant(fpv_batch({&o}))).value().vec();
}

Tensor FpvEncoder::embed_batch(const std::vector<const FpvImage*>& images) {
  return batched_forward(images, kLatentDim, [this](Tape& t, Var x) { return forward(t, x); });
}

NamedTensors FpvEncoder::state() {
  NamedTensors s = snapshot(parameters());
  s.emplace_back("enc.config", config_tensor(cfg_));
  s.emplace_back("loss_mode", Tensor({1}, static_cast<float>(cfg_.mode)));
  return s;
}

void FpvEncoder::load(const NamedTensors& tensors) {
  EncoderConfig cfg = config_from(find_tensor(tensors, "enc.config"), cfg_);
  Rng rng(0);
  *this = FpvEncoder(cfg, rng);
  restore(tensors, parameters());
  if (out_.w.value.dim(1) != kLatentDim) throw IntegrityError("encoder output dimension is not 32");
}

std::vector<float> l2_normalized(std::vector<float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  const float n = static_cast<float>(std::sqrt(s + 1e-12));
  for (float& x : v) x /= n;
  return v;
}

Var contrastive_loss_cosine(Var z, Var zp, float tau) {
  WMNAV_REQUIRE(tau > 0, "contrastive loss: tau must be positive");
  WMNAV_REQUIRE(z.shape() == zp.shape() && z.shape().size() == 2, "contrastive loss: Z and Z' must align");
  const int n = z.shape()[0];
  Var zn = ad::l2_normalize_rows(z), zpn = ad::l2_normalize_rows(zp);
  // logits[i][j] = cos(z_i, z'_j) / tau; rows score FPV->BEV, columns BEV->FPV.
  Var logits = ad::scale(ad::matmul(zn, zpn, false, true), 1.0f / tau);
  std::vector<int> diag(static_cast<std::size_t>(n));
  std::iota(diag.begin(), diag.end(), 0);
  Var pos = ad::pick(logits, diag);
  Var fpv = ad::sub(ad::logsumexp_rows(logits), pos);
  Var bev = ad::sub(ad::logsumexp_rows(ad::transpose(logits)), pos);
  return ad::scale(ad::sum(ad::add(fpv, bev)), 0.5f);
}

Var contrastive_loss_mse(Var z, Var zp) {
  WMNAV_REQUIRE(z.shape() == zp.shape() && z.shape().size() == 2, "mse loss: Z and Z' must align");
  return ad::mean(ad::row_norm(ad::sub(z, zp)));
}

Var encoder_loss(Var z, Var zp, const EncoderConfig& cfg) {
  return cfg.mode == LossMode::CosineInfoNce ? contrastive_loss_cosine(z, zp, cfg.tau) : contrastive_loss_mse(z, zp);
}

FpvEncoder train_encoder(const std::vector<LabeledView>& data, BevVae& vae, const EncoderConfig& cfg,
                         std::uint64_t seed, EncoderCurve* curve) {
  WMNAV_REQUIRE(!data.empty(), "train_encoder: empty dataset");
  WMNAV_REQUIRE(cfg.mode != LossMode::CosineInfoNce || cfg.batch_size >= 2,
                "train_encoder: cosine-infonce needs batch size >= 2");
  std::vector<const BevImage*> bevs;
  for (const auto& v : data) bevs.push_back(&v.bev);
  const Tensor targets = vae.encode_mean(bevs);

  Rng rng(seed);
  FpvEncoder enc(cfg, rng);
  auto params = enc.parameters();
  OptimState opt;
  opt.lr = cfg.lr;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      if (cfg.mode == LossMode::CosineInfoNce && e - b < 2) continue;
      Tensor zp({static_cast<int>(e - b), kLatentDim});
      for (std::size_t i = b; i < e; ++i)
        std::copy_n(targets.data() + order[i] * kLatentDim, kLatentDim, zp.data() + (i - b) * kLatentDim);
      nn::zero_grads(params);
      Tape t;
      Var z = enc.forward(t, t.constant(fpv_batch(gather(data, order, b, e))));
      Var loss = encoder_loss(z, t.constant(std::move(zp)), cfg);
      if (cfg.mode == LossMode::CosineInfoNce) loss = ad::scale(loss, 1.0f / static_cast<float>(e - b));
      t.backward(loss, "encoder loss");
      adam_step(params, opt);
      total += loss.item();
      ++batches;
    }
    if (curve) curve->epoch_loss.push_back(batches ? total / batches : 0.0);
  }
  return enc;
}

BaselineClassifier::BaselineClassifier(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  trunk_ = ConvTrunk("cls", cfg, rng);
  head_ = nn::Linear("cls.head", cfg.hidden, kNumClasses, rng, 0.5f);
}

std::vector<Parameter*> BaselineClassifier::parameters() {
  std::vector<Parameter*> out;
  trunk_.collect(out);
  head_.collect(out);
  return out;
}

Var BaselineClassifier::forward(Tape& t, Var x) { return head_(t, trunk_(t, x)); }

std::vector<RoadClass> BaselineClassifier::classify_batch(const std::vector<const FpvImage*>& images) {
  const Tensor logits = batched_forward(images, kNumClasses, [this](Tape& t, Var x) { return forward(t, x); });
  std::vector<RoadClass> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const float* row = logits.data() + i * kNumClasses;
    out.push_back(static_cast<RoadClass>(std::max_element(row, row + kNumClasses) - row));
  }
  return out;
}

RoadClass BaselineClassifier::classify(const FpvImage& o) { return classify_batch({&o})[0]; }

NamedTensors BaselineClassifier::state() {
  NamedTensors s = snapshot(parameters());
  s.emplace_back("cls.config", config_tensor(cfg_));
  return s;
}

void BaselineClassifier::load(const NamedTensors& tensors) {
  EncoderConfig cfg = config_from(find_tensor(tensors, "cls.config"), cfg_);
  Rng rng(0);
  *this = BaselineClassifier(cfg, rng);
  restore(tensors, parameters());
}

BaselineClassifier train_baseline_classifier(const std::vector<LabeledView>& data, const EncoderConfig& cfg,
                                             std::uint64_t seed, EncoderCurve* curve) {
  std::set<RoadClass> present;
  for (const auto& v : data) present.insert(v.cls);
  WMNAV_REQUIRE(present.size() >= 2, "train_baseline_classifier: need at least two classes");
  Rng rng(seed);
  BaselineClassifier model(cfg, rng);
  auto params = model.parameters();
  OptimState opt;
  opt.lr = cfg.lr;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) labels.push_back(static_cast<int>(data[order[i]].cls));
      nn::zero_grads(params);
      Tape t;
      Var logits = model.forward(t, t.constant(fpv_batch(gather(data, order, b, e))));
      Var loss = ad::mean(ad::sub(ad::logsumexp_rows(logits), ad::pick(logits, labels)));
      t.backward(loss, "classifier loss");
      adam_step(params, opt);
      total += loss.item();
      ++batches;
    }
    if (curve) curve->epoch_loss.push_back(batches ? total / batches : 0.0);
  }
  return model;
}

}  // namespace wmnav

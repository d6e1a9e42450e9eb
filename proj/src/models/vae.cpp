#include "wmnav/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wmnav/error.hpp"
#include "wmnav/optim.hpp"

namespace wmnav {

Tensor bev_batch(const std::vector<const BevImage*>& images) {
  WMNAV_REQUIRE(!images.empty(), "bev_batch: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor t({static_cast<int>(images.size()), 1, h, w});
  float* out = t.data();
  for (const BevImage* img : images) {
    WMNAV_REQUIRE(img->height == h && img->width == w && img->pixels.size() == static_cast<std::size_t>(h * w),
                  "bev_batch: inconsistent image shape");
    for (std::uint8_t p : img->pixels) *out++ = p ? 1.0f : 0.0f;
  }
  return t;
}

Tensor bev_batch(const std::vector<BevImage>& images) {
  std::vector<const BevImage*> ptrs;
  for (const auto& i : images) ptrs.push_back(&i);
  return bev_batch(ptrs);
}

BevVae::BevVae(const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
  WMNAV_REQUIRE(cfg.latent_dim == kLatentDim, "VAE latent_dim must be 32");
  WMNAV_REQUIRE(cfg.beta >= 0, "VAE beta must be non-negative");
  WMNAV_REQUIRE(cfg.image_size % 8 == 0, "VAE image size must be divisible by 8");
  const auto [a, b, c] = cfg.widths;
  feat_ = cfg.image_size / 8;
  e1_ = nn::Conv2d("vae.e1", 1, a, 4, 2, 1, rng);
  e2_ = nn::Conv2d("vae.e2", a, b, 4, 2, 1, rng);
  e3_ = nn::Conv2d("vae.e3", b, c, 4, 2, 1, rng);
  e_fc_ = nn::Linear("vae.e_fc", c * feat_ * feat_, 2 * cfg.latent_dim, rng, 0.5f);
  d_fc_ = nn::Linear("vae.d_fc", cfg.latent_dim, c * feat_ * feat_, rng);
  d1_ = nn::ConvTranspose2d("vae.d1", c, b, 4, 2, 1, rng);
  d2_ = nn::ConvTranspose2d("vae.d2", b, a, 4, 2, 1, rng);
  d3_ = nn::ConvTranspose2d("vae.d3", a, 1, 4, 2, 1, rng);
}

std::vector<Parameter*> BevVae::parameters() {
  std::vector<Parameter*> out;
  e1_.collect(out), e2_.collect(out), e3_.collect(out), e_fc_.collect(out);
  d_fc_.collect(out), d1_.collect(out), d2_.collect(out), d3_.collect(out);
  return out;
}

std::pair<Var, Var> BevVae::encode(Tape& t, Var x) {
  const Shape s = x.shape();
  WMNAV_REQUIRE(s.size() == 4 && s[1] == 1 && s[2] == cfg_.image_size && s[3] == cfg_.image_size,
                "VAE encode: expected [N,1," + std::to_string(cfg_.image_size) + "," +
                    std::to_string(cfg_.image_size) + "], got " + shape_str(s));
  Var h = ad::relu(e1_(t, x));
  h = ad::relu(e2_(t, h));
  h = ad::relu(e3_(t, h));
  h = ad::reshape(h, {s[0], cfg_.widths[2] * feat_ * feat_});
  Var out = e_fc_(t, h);
  return {ad::slice_cols(out, 0, cfg_.latent_dim), ad::slice_cols(out, cfg_.latent_dim, 2 * cfg_.latent_dim)};
}

Var BevVae::decode_logits(Tape& t, Var z) {
  WMNAV_REQUIRE(z.shape().size() == 2 && z.shape()[1] == cfg_.latent_dim, "VAE decode: expected [N,32]");
  const int n = z.shape()[0];
  Var h = ad::relu(d_fc_(t, z));
  h = ad::reshape(h, {n, cfg_.widths[2], feat_, feat_});
  h = ad::relu(d1_(t, h));
  h = ad::relu(d2_(t, h));
  return d3_(t, h);
}

GaussianParams BevVae::encode(const BevImage& x) {
  WMNAV_REQUIRE(x.height == cfg_.image_size && x.width == cfg_.image_size, "VAE encode: wrong BEV size");
  for (std::uint8_t p : x.pixels) WMNAV_REQUIRE(p <= 1, "VAE encode: BEV must be binary");
  Tape t;
  auto [mu, ls] = encode(t, t.constant(bev_batch({&x})));
  GaussianParams g;
  g.mu = mu.value().vec();
  for (float v : ls.value().vec()) g.sigma.push_back(std::exp(v));
  return g;
}

Tensor BevVae::encode_mean(const std::vector<const BevImage*>& xs) {
  const int d = cfg_.latent_dim;
  Tensor out({static_cast<int>(xs.size()), d});
  constexpr std::size_t kChunk = 128;
  for (std::size_t b = 0; b < xs.size(); b += kChunk) {
    const std::size_t e = std::min(xs.size(), b + kChunk);
    Tape t;
    auto [mu, ls] = encode(t, t.constant(bev_batch(std::vector<const BevImage*>(xs.begin() + static_cast<std::ptrdiff_t>(b), xs.begin() + static_cast<std::ptrdiff_t>(e)))));
    std::copy(mu.value().vec().begin(), mu.value().vec().end(), out.data() + b * static_cast<std::size_t>(d));
  }
  return out;
}

Tensor BevVae::decode(const Tensor& z) {
  Tensor zz = z.rank() == 1 ? z.reshaped({1, z.dim(0)}) : z;
  WMNAV_REQUIRE(zz.all_finite(), "VAE decode: non-finite latent");
  Tape t;
  Var p = ad::sigmoid(decode_logits(t, t.constant(zz)));
  const int n = zz.dim(0);
  return p.value().reshaped({n, cfg_.image_size * cfg_.image_size});
}

NamedTensors BevVae::state() {
  NamedTensors s = snapshot(parameters());
  s.emplace_back("vae.config", Tensor({6}, std::vector<float>{static_cast<float>(cfg_.latent_dim), cfg_.beta,
                                                               static_cast<float>(cfg_.widths[0]), static_cast<float>(cfg_.widths[1]),
                                                               static_cast<float>(cfg_.widths[2]), static_cast<float>(cfg_.image_size)}));
  return s;
}

void BevVae::load(const NamedTensors& tensors) {
  const Tensor& c = find_tensor(tensors, "vae.config");
  if (c.size() != 6) throw IntegrityError("tensor 'vae.config' has the wrong length");
  if (static_cast<int>(c[0]) != kLatentDim) throw IntegrityError("VAE checkpoint latent dim is not 32");
  VaeConfig cfg = cfg_;
  cfg.latent_dim = static_cast<int>(c[0]);
  cfg.beta = c[1];
  cfg.widths = {static_cast<int>(c[2]), static_cast<int>(c[3]), static_cast<int>(c[4])};
  cfg.image_size = static_cast<int>(c[5]);
  Rng rng(0);
  *this = BevVae(cfg, rng);
  restore(tensors, parameters());
}

std::vector<float> sample_latent(const GaussianParams& g, Rng& rng) {
  WMNAV_REQUIRE(g.mu.size() == g.sigma.size(), "sample_latent: mu/sigma size mismatch");
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> z(g.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.mu[i] + g.sigma[i] * n(rng);
  return z;
}

Var gaussian_kl(Var mu, Var log_sigma) {
  // 0.5 * (mu^2 + sigma^2 - 1 - 2 log sigma)
  Var var = ad::exp(ad::scale(log_sigma, 2.0f));
  Var inner = ad::sub(ad::add(ad::square(mu), var), ad::add_scalar(ad::scale(log_sigma, 2.0f), 1.0f));
  return ad::scale(ad::sum(inner), 0.5f);
}

Var vae_loss_terms(Var logits, Var mu, Var log_sigma, const Tensor& targets, float beta) {
  WMNAV_REQUIRE(beta >= 0, "vae_loss: beta must be non-negative");
  Var rec = ad::bce_with_logits_clamped(logits, targets);
  check_finite(rec, "reconstruction");
  if (beta == 0.0f) return rec;
  Var kl = gaussian_kl(mu, log_sigma);
  check_finite(kl, "kl");
  return ad::add(rec, ad::scale(kl, beta));
}

Var vae_loss(Tape& t, BevVae& model, const Tensor& batch, float beta, Rng& rng) {
  WMNAV_REQUIRE(batch.rank() == 4 && batch.dim(0) > 0, "vae_loss: empty batch");
  auto [mu, ls] = model.encode(t, t.constant(batch));
  Tensor eps(mu.shape());
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (float& v : eps.vec()) v = n(rng);
  Var z = ad::add(mu, ad::mul(ad::exp(ls), t.constant(std::move(eps))));
  Var logits = model.decode_logits(t, z);
  return vae_loss_terms(logits, mu, ls, batch, beta);
}

BevVae train_vae(const std::vector<BevImage>& data, const VaeConfig& cfg, std::uint64_t seed, TrainCurve* curve) {
  WMNAV_REQUIRE(!data.empty(), "train_vae: empty dataset");
  WMNAV_REQUIRE(cfg.batch_size > 0 && cfg.epochs >= 0, "train_vae: bad batch size or epochs");
  Rng rng(seed);
  BevVae model(cfg, rng);
  auto params = model.parameters();
  OptimState opt;
  opt.lr = cfg.lr;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const BevImage*> batch;
      for (std::size_t i = b; i < e; ++i) batch.push_back(&data[order[i]]);
      nn::zero_grads(params);
      Tape t;
      Var loss = vae_loss(t, model, bev_batch(batch), cfg.beta, rng);
      total += loss.item();
      // Mean over the batch keeps the step size independent of batch length.
      t.backward(ad::scale(loss, 1.0f / static_cast<float>(batch.size())), "vae loss");
      adam_step(params, opt);
    }
    if (curve) curve->epoch_loss.push_back(total / static_cast<double>(data.size()));
  }
  return model;
}

double bev_iou(const float* probs, const BevImage& truth) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < truth.pixels.size(); ++i) {
    const bool p = probs[i] >= 0.5f, y = truth.pixels[i] != 0;
    inter += p && y;
    uni += p || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace wmnav

#include "wmnav/memory.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include "wmnav/error.hpp"
#include "wmnav/optim.hpp"

namespace wmnav {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Tensor row_tensor(const std::vector<float>& v) { return Tensor({1, static_cast<int>(v.size())}, v); }

Tensor action_tensor(const std::vector<const Action*>& as) {
  Tensor t({static_cast<int>(as.size()), 2});
  for (std::size_t i = 0; i < as.size(); ++i) t[2 * i] = as[i]->throttle, t[2 * i + 1] = as[i]->steer;
  return t;
}

}  // namespace

std::vector<float> MdnOutput::mean(int j) const {
  const auto b = means.begin() + static_cast<std::ptrdiff_t>(j) * kLatentDim;
  return {b, b + kLatentDim};
}

MdnOutput make_mdn_output(const std::vector<float>& logits, const std::vector<float>& means,
                          const std::vector<float>& log_sigmas) {
  const std::size_t k = logits.size();
  WMNAV_REQUIRE(k > 0 && log_sigmas.size() == k && means.size() == k * kLatentDim, "MDN output sizes disagree");
  MdnOutput o;
  const float mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (float l : logits) z += std::exp(static_cast<double>(l - mx));
  const double lz = mx + std::log(z);
  for (float l : logits) {
    o.log_weights.push_back(static_cast<float>(l - lz));
    o.weights.push_back(static_cast<float>(std::exp(l - lz)));
  }
  o.means = means;
  o.log_sigmas = log_sigmas;
  for (float s : log_sigmas) o.sigmas.push_back(std::exp(s));
  return o;
}

MdnLstm::MdnLstm(const MemoryConfig& cfg, Rng& rng) : cfg_(cfg) {
  WMNAV_REQUIRE(cfg.hidden > 0 && cfg.mixtures > 0, "memory: hidden and mixtures must be positive");
  cell_ = nn::LstmCell("mem.lstm", kLatentDim + 2, cfg.hidden, rng);
  head_ = nn::Linear("mem.head", cfg.hidden, cfg.mixtures * (kLatentDim + 2), rng, 0.5f);
}

std::vector<Parameter*> MdnLstm::parameters() {
  std::vector<Parameter*> out;
  cell_.collect(out);
  head_.collect(out);
  return out;
}

MdnLstm::StepVars MdnLstm::step(Tape& t, Var z, Var a, Var h, Var c) {
  auto [h2, c2] = cell_(t, ad::concat_cols(z, a), h, c);
  Var out = head_(t, h2);
  const int k = cfg_.mixtures;
  return {h2, c2, ad::slice_cols(out, 0, k), ad::slice_cols(out, k, k + k * kLatentDim),
          ad::slice_cols(out, k + k * kLatentDim, k * (kLatentDim + 2))};
}

MemoryHidden MdnLstm::initial_hidden() const {
  return {std::vector<float>(static_cast<std::size_t>(cfg_.hidden), 0.0f),
          std::vector<float>(static_cast<std::size_t>(cfg_.hidden), 0.0f)};
}

std::pair<MemoryHidden, MdnOutput> MdnLstm::mdn_step(const MemoryHidden& h, const std::vector<float>& z_prev,
                                                     const Action& a_prev) {
  WMNAV_REQUIRE(z_prev.size() == static_cast<std::size_t>(kLatentDim), "mdn_step: latent must have 32 values");
  WMNAV_REQUIRE(h.h.size() == static_cast<std::size_t>(cfg_.hidden) && h.c.size() == h.h.size(),
                "mdn_step: hidden state width mismatch");
  Tape t;
  auto s = step(t, t.constant(row_tensor(z_prev)), t.constant(action_tensor({&a_prev})), t.constant(row_tensor(h.h)),
                t.constant(row_tensor(h.c)));
  return {MemoryHidden{s.h.value().vec(), s.c.value().vec()},
          make_mdn_output(s.logits.value().vec(), s.means.value().vec(), s.log_sigmas.value().vec())};
}

NamedTensors MdnLstm::state() {
  NamedTensors s = snapshot(parameters());
  s.emplace_back("mem.config", Tensor({2}, std::vector<float>{static_cast<float>(cfg_.hidden), static_cast<float>(cfg_.mixtures)}));
  return s;
}

void MdnLstm::load(const NamedTensors& tensors) {
  const Tensor& c = find_tensor(tensors, "mem.config");
  if (c.size() != 2) throw IntegrityError("tensor 'mem.config' has the wrong length");
  MemoryConfig cfg = cfg_;
  cfg.hidden = static_cast<int>(c[0]);
  cfg.mixtures = static_cast<int>(c[1]);
  Rng rng(0);
  *this = MdnLstm(cfg, rng);
  restore(tensors, parameters());
  if (cell_.wx.value.dim(0) != kLatentDim + 2) throw IntegrityError("memory checkpoint input width is not 34");
}

Var mdn_nll_terms(Var logits, Var means, Var log_sigmas, const Tensor& target) {
  const int n = logits.shape()[0], k = logits.shape()[1];
  WMNAV_REQUIRE(means.shape() == Shape({n, k * kLatentDim}) && log_sigmas.shape() == Shape({n, k}) &&
                    target.shape() == Shape({n, kLatentDim}),
                "mdn_nll: shape mismatch");
  Tensor tiled({n, k * kLatentDim});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      std::copy_n(target.data() + static_cast<std::size_t>(i) * kLatentDim, kLatentDim,
                  tiled.data() + (static_cast<std::size_t>(i) * k + j) * kLatentDim);
  Tape& t = *logits.tape;
  Var sq = ad::reshape(ad::square(ad::sub(means, t.constant(std::move(tiled)))), {n * k, kLatentDim});
  Var dist = ad::reshape(ad::sum_rows(sq), {n, k});
  Var inv_var = ad::exp(ad::scale(log_sigmas, -2.0f));
  Var log_n = ad::add_scalar(ad::sub(ad::scale(ad::mul(dist, inv_var), -0.5f), ad::scale(log_sigmas, kLatentDim)),
                             static_cast<float>(-0.5 * kLatentDim * kLog2Pi));
  // -log sum_j softmax(logits)_j N_j = lse(logits) - lse(logits + log N)
  Var nll = ad::sub(ad::logsumexp_rows(logits), ad::logsumexp_rows(ad::add(logits, log_n)));
  return ad::mean(nll);
}

double mdn_nll(const MdnOutput& out, const std::vector<float>& z) {
  WMNAV_REQUIRE(z.size() == static_cast<std::size_t>(kLatentDim), "mdn_nll: target must have 32 values");
  const int k = out.components();
  std::vector<double> terms(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    double d = 0;
    for (int i = 0; i < kLatentDim; ++i) {
      const double e = static_cast<double>(z[static_cast<std::size_t>(i)]) - out.means[static_cast<std::size_t>(j * kLatentDim + i)];
      d += e * e;
    }
    const double ls = out.log_sigmas[static_cast<std::size_t>(j)];
    terms[static_cast<std::size_t>(j)] = out.log_weights[static_cast<std::size_t>(j)] - 0.5 * d * std::exp(-2 * ls) -
                                         kLatentDim * ls - 0.5 * kLatentDim * kLog2Pi;
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double s = 0;
  for (double v : terms) s += std::exp(v - mx);
  return -(mx + std::log(s));
}

std::vector<float> mdn_select(const MdnOutput& out, SelectMode mode, Rng* rng) {
  const int k = out.components();
  WMNAV_REQUIRE(k > 0, "mdn_select: empty mixture");
  if (mode == SelectMode::Mode) {
    const auto best = std::max_element(out.weights.begin(), out.weights.end()) - out.weights.begin();
    return out.mean(static_cast<int>(best));
  }
  WMNAV_REQUIRE(rng != nullptr, "mdn_select: sampling needs an rng");
  std::discrete_distribution<int> pick(out.weights.begin(), out.weights.end());
  const int j = pick(*rng);
  std::vector<float> z = out.mean(j);
  std::normal_distribution<float> n(0.0f, 1.0f);
  const float s = out.sigmas[static_cast<std::size_t>(j)];
  for (float& v : z) v += s * n(*rng);
  return z;
}

std::vector<std::vector<float>> interpolate(MdnLstm& model, MemoryHidden h, std::vector<float> z,
                                            const std::vector<Action>& actions) {
  std::vector<std::vector<float>> out;
  for (const Action& a : actions) {
    auto [h2, o] = model.mdn_step(h, z, a);
    h = std::move(h2);
    z = mdn_select(o, SelectMode::Mode);
    out.push_back(z);
  }
  return out;
}

namespace {

// Sequences of equal length are batched together.
std::map<int, std::vector<const LatentSequence*>> group_by_length(const std::vector<LatentSequence>& data, int* skipped) {
  std::map<int, std::vector<const LatentSequence*>> groups;
  for (const auto& s : data) {
    WMNAV_REQUIRE(s.latents.rank() == 2 && s.latents.dim(1) == kLatentDim &&
                      s.actions.size() == static_cast<std::size_t>(s.latents.dim(0)),
                  "memory: sequence latents/actions misaligned");
    if (s.latents.dim(0) < 2) {
      if (skipped) ++*skipped;
      continue;
    }
    groups[s.latents.dim(0)].push_back(&s);
  }
  return groups;
}

Tensor gather_latents(const std::vector<const LatentSequence*>& b, int t) {
  Tensor out({static_cast<int>(b.size()), kLatentDim});
  for (std::size_t i = 0; i < b.size(); ++i)
    std::copy_n(b[i]->latents.data() + static_cast<std::size_t>(t) * kLatentDim, kLatentDim, out.data() + i * kLatentDim);
  return out;
}

Tensor gather_actions(const std::vector<const LatentSequence*>& b, int t) {
  std::vector<const Action*> as;
  for (const auto* s : b) as.push_back(&s->actions[static_cast<std::size_t>(t)]);
  return action_tensor(as);
}

// Teacher-forced pass over one batch; calls `on_chunk` with each chunk's
// summed loss and step count. Returns the summed NLL over all steps.
template <typename F>
double run_batch(MdnLstm& model, const std::vector<const LatentSequence*>& b, int chunk, F&& on_chunk) {
  const int len = b[0]->latents.dim(0);
  const int n = static_cast<int>(b.size()), hidden = model.config().hidden;
  Tensor h({n, hidden}), c({n, hidden});
  double total = 0;
  for (int s = 0; s + 1 < len; s += chunk) {
    const int e = std::min(len - 1, s + chunk);
    Tape t;
    Var hv = t.constant(h), cv = t.constant(c);
    Var loss;
    for (int k = s; k < e; ++k) {
      auto st = model.step(t, t.constant(gather_latents(b, k)), t.constant(gather_actions(b, k)), hv, cv);
      hv = st.h, cv = st.c;
      Var l = mdn_nll_terms(st.logits, st.means, st.log_sigmas, gather_latents(b, k + 1));
      loss = k == s ? l : ad::add(loss, l);
    }
    total += static_cast<double>(loss.item()) * n;
    on_chunk(t, loss, e - s);
    h = hv.value(), c = cv.value();
  }
  return total;
}

}  // namespace

MdnLstm train_memory(const std::vector<LatentSequence>& data, const MemoryConfig& cfg, std::uint64_t seed,
                     MemoryCurve* curve) {
  int skipped = 0;
  auto groups = group_by_length(data, &skipped);
  if (skipped) std::cerr << "train_memory: skipped " << skipped << " sequence(s) shorter than 2\n";
  if (curve) curve->skipped = skipped;
  WMNAV_REQUIRE(!groups.empty(), "train_memory: no usable sequences");
  WMNAV_REQUIRE(cfg.chunk > 0 && cfg.batch_size > 0, "train_memory: bad chunk or batch size");

  Rng rng(seed);
  MdnLstm model(cfg, rng);
  auto params = model.parameters();
  OptimState opt;
  opt.lr = cfg.lr;
  std::vector<std::vector<const LatentSequence*>> batches;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batches.clear();
    for (auto& [len, seqs] : groups) {
      std::shuffle(seqs.begin(), seqs.end(), rng);
      for (std::size_t i = 0; i < seqs.size(); i += static_cast<std::size_t>(cfg.batch_size))
        batches.emplace_back(seqs.begin() + static_cast<std::ptrdiff_t>(i),
                             seqs.begin() + static_cast<std::ptrdiff_t>(std::min(seqs.size(), i + static_cast<std::size_t>(cfg.batch_size))));
    }
    std::shuffle(batches.begin(), batches.end(), rng);
    double total = 0;
    long steps = 0;
    for (const auto& b : batches) {
      total += run_batch(model, b, cfg.chunk, [&](Tape& t, Var loss, int nsteps) {
        nn::zero_grads(params);
        t.backward(ad::scale(loss, 1.0f / static_cast<float>(nsteps)), "mdn nll");
        if (cfg.grad_clip > 0) nn::clip_grad_norm(params, cfg.grad_clip);
        adam_step(params, opt);
      });
      steps += static_cast<long>(b.size()) * (b[0]->latents.dim(0) - 1);
    }
    if (curve) curve->epoch_nll.push_back(total / static_cast<double>(steps));
  }
  return model;
}

double evaluate_memory_nll(MdnLstm& model, const std::vector<LatentSequence>& data) {
  auto groups = group_by_length(data, nullptr);
  WMNAV_REQUIRE(!groups.empty(), "evaluate_memory_nll: no usable sequences");
  double total = 0;
  long steps = 0;
  for (auto& [len, seqs] : groups) {
    total += run_batch(model, seqs, len, [](Tape&, Var, int) {});
    steps += static_cast<long>(seqs.size()) * (len - 1);
  }
  return total / static_cast<double>(steps);
}

CopyLastBaseline CopyLastBaseline::fit(const std::vector<LatentSequence>& data) {
  CopyLastBaseline b;
  b.mean_residual.assign(kLatentDim, 0.0f);
  std::vector<double> m(kLatentDim, 0.0);
  long count = 0;
  for (const auto& s : data)
    for (int t = 0; t + 1 < s.latents.dim(0); ++t, ++count)
      for (int i = 0; i < kLatentDim; ++i)
        m[static_cast<std::size_t>(i)] += s.latents[static_cast<std::size_t>((t + 1) * kLatentDim + i)] - s.latents[static_cast<std::size_t>(t * kLatentDim + i)];
  WMNAV_REQUIRE(count > 0, "copy-last baseline: no transitions");
  for (int i = 0; i < kLatentDim; ++i) m[static_cast<std::size_t>(i)] /= static_cast<double>(count);
  double var = 0;
  for (const auto& s : data)
    for (int t = 0; t + 1 < s.latents.dim(0); ++t)
      for (int i = 0; i < kLatentDim; ++i) {
        const double r = s.latents[static_cast<std::size_t>((t + 1) * kLatentDim + i)] - s.latents[static_cast<std::size_t>(t * kLatentDim + i)] - m[static_cast<std::size_t>(i)];
        var += r * r;
      }
  b.variance = std::max(var / (static_cast<double>(count) * kLatentDim), 1e-12);
  for (int i = 0; i < kLatentDim; ++i) b.mean_residual[static_cast<std::size_t>(i)] = static_cast<float>(m[static_cast<std::size_t>(i)]);
  return b;
}

double CopyLastBaseline::nll(const std::vector<LatentSequence>& data) const {
  double total = 0;
  long count = 0;
  for (const auto& s : data)
    for (int t = 0; t + 1 < s.latents.dim(0); ++t, ++count) {
      double d = 0;
      for (int i = 0; i < kLatentDim; ++i) {
        const double e = s.latents[static_cast<std::size_t>((t + 1) * kLatentDim + i)] - s.latents[static_cast<std::size_t>(t * kLatentDim + i)] - mean_residual[static_cast<std::size_t>(i)];
        d += e * e;
      }
      total += 0.5 * d / variance + 0.5 * kLatentDim * (std::log(variance) + kLog2Pi);
    }
  WMNAV_REQUIRE(count > 0, "copy-last baseline: no transitions");
  return total / static_cast<double>(count);
}

}  // namespace wmnav

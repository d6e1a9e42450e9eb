#include "wmnav/nn.hpp"

#include <cmath>

#include "wmnav/error.hpp"

namespace wmnav::nn {

namespace {

Tensor uniform(Shape shape, float bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.vec()) v = dist(rng);
  return t;
}

}  // namespace

Linear::Linear(const std::string& name, int in, int out, Rng& rng, float gain)
    : w(name + ".w", uniform({in, out}, gain * std::sqrt(6.0f / static_cast<float>(in)), rng)),
      b(name + ".b", Tensor({out})) {}

Var Linear::operator()(Tape& t, Var x) { return ad::add_bias(ad::matmul(x, t.param(w)), t.param(b)); }

Conv2d::Conv2d(const std::string& name, int in, int out, int kernel, int stride_, int pad_, Rng& rng)
    : w(name + ".w", uniform({out, in, kernel, kernel}, std::sqrt(6.0f / static_cast<float>(in * kernel * kernel)), rng)),
      b(name + ".b", Tensor({out})),
      stride(stride_),
      pad(pad_) {}

Var Conv2d::operator()(Tape& t, Var x) {
  return ad::add_channel_bias(ad::conv2d(x, t.param(w), stride, pad), t.param(b));
}

ConvTranspose2d::ConvTranspose2d(const std::string& name, int in, int out, int kernel, int stride_, int pad_, Rng& rng)
    : w(name + ".w", uniform({in, out, kernel, kernel}, std::sqrt(6.0f / static_cast<float>(in * kernel * kernel / (stride_ * stride_))), rng)),
      b(name + ".b", Tensor({out})),
      stride(stride_),
      pad(pad_) {}

Var ConvTranspose2d::operator()(Tape& t, Var x) {
  return ad::add_channel_bias(ad::conv_transpose2d(x, t.param(w), stride, pad), t.param(b));
}

LstmCell::LstmCell(const std::string& name, int in, int hidden_, Rng& rng)
    : wx(name + ".wx", uniform({in, 4 * hidden_}, std::sqrt(1.0f / static_cast<float>(hidden_)), rng)),
      wh(name + ".wh", uniform({hidden_, 4 * hidden_}, std::sqrt(1.0f / static_cast<float>(hidden_)), rng)),
      b(name + ".b", Tensor({4 * hidden_})),
      hidden(hidden_) {
  for (int i = hidden; i < 2 * hidden; ++i) b.value[static_cast<std::size_t>(i)] = 1.0f;
}

std::pair<Var, Var> LstmCell::operator()(Tape& t, Var x, Var h, Var c) {
  Var gates = ad::add_bias(ad::add(ad::matmul(x, t.param(wx)), ad::matmul(h, t.param(wh))), t.param(b));
  Var i = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
  Var f = ad::sigmoid(ad::slice_cols(gates, hidden, 2 * hidden));
  Var g = ad::tanh(ad::slice_cols(gates, 2 * hidden, 3 * hidden));
  Var o = ad::sigmoid(ad::slice_cols(gates, 3 * hidden, 4 * hidden));
  Var c2 = ad::add(ad::mul(f, c), ad::mul(i, g));
  Var h2 = ad::mul(o, ad::tanh(c2));
  return {h2, c2};
}

void copy_values(const std::vector<Parameter*>& src, const std::vector<Parameter*>& dst) {
  WMNAV_REQUIRE(src.size() == dst.size(), "copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    WMNAV_REQUIRE(src[i]->value.shape() == dst[i]->value.shape(), "copy_values: shape mismatch for " + src[i]->name);
    dst[i]->value = src[i]->value;
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

float clip_grad_norm(const std::vector<Parameter*>& params, float max_norm) {
  double sq = 0;
  for (const Parameter* p : params)
    for (float g : p->grad.vec()) sq += static_cast<double>(g) * g;
  const float norm = static_cast<float>(std::sqrt(sq));
  if (norm > max_norm && norm > 0.0f) {
    const float s = max_norm / norm;
    for (Parameter* p : params)
      for (float& g : p->grad.vec()) g *= s;
  }
  return norm;
}

std::size_t count_params(const std::vector<Parameter*>& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

}  // namespace wmnav::nn

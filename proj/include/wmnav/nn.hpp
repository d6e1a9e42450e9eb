#pragma once

#include <random>
#include <string>
#include <vector>

#include "wmnav/autodiff.hpp"

namespace wmnav {

using Rng = std::mt19937_64;

namespace nn {

/// He-uniform initialised weights, zero bias.
struct Linear {
  Parameter w;  // [in, out]
  Parameter b;  // [out]

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, float gain = 1.0f);
  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&w), out.push_back(&b); }
};

struct Conv2d {
  Parameter w;  // [out, in, k, k]
  Parameter b;  // [out]
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride, int pad, Rng& rng);
  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&w), out.push_back(&b); }
};

struct ConvTranspose2d {
  Parameter w;  // [in, out, k, k]
  Parameter b;  // [out]
  int stride = 1, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in, int out, int kernel, int stride, int pad, Rng& rng);
  Var operator()(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&w), out.push_back(&b); }
};

struct LstmState {
  Tensor h;  // [N, H]
  Tensor c;  // [N, H]
};

/// Standard LSTM cell, gate order (input, forget, cell, output).
struct LstmCell {
  Parameter wx;  // [in, 4H]
  Parameter wh;  // [H, 4H]
  Parameter b;   // [4H], forget-gate slice initialised to 1
  int hidden = 0;

  LstmCell() = default;
  LstmCell(const std::string& name, int in, int hidden, Rng& rng);
  /// Returns (h, c) after one step.
  std::pair<Var, Var> operator()(Tape& t, Var x, Var h, Var c);
  void collect(std::vector<Parameter*>& out) { out.push_back(&wx), out.push_back(&wh), out.push_back(&b); }
};

/// Copies parameter values from `src` into `dst` (same order and shapes).
void copy_values(const std::vector<Parameter*>& src, const std::vector<Parameter*>& dst);
void zero_grads(const std::vector<Parameter*>& params);
/// Scales gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
float clip_grad_norm(const std::vector<Parameter*>& params, float max_norm);
std::size_t count_params(const std::vector<Parameter*>& params);

}  // namespace nn
}  // namespace wmnav

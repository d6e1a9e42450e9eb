#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape records every operation applied to Vars created from it. Calling
// backward() on a scalar Var walks the tape in reverse and accumulates
// gradients into the Parameter objects that were bound with Tape::param().
// A Tape is single-use per forward pass and is not thread-safe.

#include <functional>
#include <string>
#include <vector>

#include "wmnav/tensor.hpp"

namespace wmnav {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  float item() const { return value().item(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Tensor t);
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into bound parameters.
  /// Throws NumericError naming `term` if the loss is not finite.
  void backward(Var loss, const std::string& term = "loss");

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer for node `id`, allocated on first use.
  Tensor& grad(int id);
  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  Var push(Tensor value, std::initializer_list<Var> parents, Backward backward);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

/// Throws NumericError("non-finite <term>") unless every element of v is finite.
void check_finite(Var v, const std::string& term);

namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_scalar(Var a, float s);
/// x [N,F] + b [F]
Var add_bias(Var x, Var b);
/// x [N,C,H,W] + b [C]
Var add_channel_bias(Var x, Var b);
/// a [M,K] * b [K,N]; trans flags treat the stored operand as transposed.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var transpose(Var a);

/// x [N,C,H,W], w [O,C,k,k] -> [N,O,Ho,Wo]
Var conv2d(Var x, Var w, int stride, int pad);
/// x [N,C,H,W], w [C,O,k,k] -> [N,O,(H-1)*s-2p+k,...]; adjoint of conv2d.
Var conv_transpose2d(Var x, Var w, int stride, int pad);

Var relu(Var a);
Var leaky_relu(Var a, float slope);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp(Var a, float lo, float hi);
Var minimum(Var a, Var b);

Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
/// [N,F] -> [N]
Var sum_rows(Var a);
Var logsumexp_rows(Var a);
Var row_norm(Var a);
Var l2_normalize_rows(Var a);
/// [N,F] -> [N,end-begin]
Var slice_cols(Var a, int begin, int end);
Var concat_cols(Var a, Var b);
/// out[i] = a[i, index[i]]
Var pick(Var a, std::vector<int> index);

/// Sum over all pixels of -(y log p + (1-y) log(1-p)), p = clamp(sigmoid(logits), 1e-6, 1-1e-6).
Var bce_with_logits_clamped(Var logits, const Tensor& targets);

}  // namespace ad
}  // namespace wmnav

#include "wmnav/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "wmnav/error.hpp"
#include "wmnav/kernels.hpp"

namespace wmnav {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, nullptr, nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, nullptr, &p, true});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || requires_grad(p.id);
  nodes_.push_back(Node{std::move(value), {}, rg ? std::move(backward) : nullptr, nullptr, rg});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss, const std::string& term) {
  WMNAV_REQUIRE(loss.tape == this, "backward on a Var from another tape");
  const Tensor& lv = value(loss.id);
  WMNAV_REQUIRE(lv.size() == 1, "backward requires a scalar loss, got " + shape_str(lv.shape()));
  if (!std::isfinite(lv[0])) throw NumericError("non-finite " + term + " (value " + std::to_string(lv[0]) + ")");
  grad(loss.id)[0] = 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      Tensor& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor(n.value.shape());
      const Tensor& g = nodes_[static_cast<std::size_t>(id)].grad;
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  }
}

void check_finite(Var v, const std::string& term) {
  if (!v.value().all_finite()) throw NumericError("non-finite " + term);
}

namespace ad {

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  WMNAV_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  Tape& t = *a.tape;
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return t.push(std::move(out), {a}, [a, dfdx](Tape& tp, int self) {
    if (!tp.requires_grad(a.id)) return;
    const Tensor& x = tp.value(a.id);
    const Tensor& y = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad(a.id);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

void accumulate(Tensor& dst, const Tensor& src, float s = 1.0f) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    if (t.requires_grad(a.id)) accumulate(t.grad(a.id), t.grad(self));
    if (t.requires_grad(b.id)) accumulate(t.grad(b.id), t.grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  accumulate(out, b.value(), -1.0f);
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    if (t.requires_grad(a.id)) accumulate(t.grad(a.id), t.grad(self));
    if (t.requires_grad(b.id)) accumulate(t.grad(b.id), t.grad(self), -1.0f);
  });
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad(a.id);
      const Tensor& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      const Tensor& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, float s) {
  return unary(a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

Var add_scalar(Var a, float s) {
  return unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var add_bias(Var x, Var b) {
  WMNAV_REQUIRE(x.value().rank() == 2 && b.value().rank() == 1 && b.shape()[0] == x.shape()[1],
                "add_bias: expected [N,F] + [F], got " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const int n = x.shape()[0], f = x.shape()[1];
  Tensor out = x.value();
  const Tensor& bv = b.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j) out[static_cast<std::size_t>(i) * f + j] += bv[static_cast<std::size_t>(j)];
  return x.tape->push(std::move(out), {x, b}, [x, b, n, f](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(x.id)) accumulate(t.grad(x.id), g);
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * f + j];
    }
  });
}

Var add_channel_bias(Var x, Var b) {
  WMNAV_REQUIRE(x.value().rank() == 4 && b.value().rank() == 1 && b.shape()[0] == x.shape()[1],
                "add_channel_bias: expected [N,C,H,W] + [C]");
  const int n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor out = x.value();
  const Tensor& bv = b.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      float* p = out.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int k = 0; k < hw; ++k) p[k] += bv[static_cast<std::size_t>(ch)];
    }
  return x.tape->push(std::move(out), {x, b}, [x, b, n, c, hw](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(x.id)) accumulate(t.grad(x.id), g);
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const float* p = g.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
          double s = 0;
          for (int k = 0; k < hw; ++k) s += p[k];
          gb[static_cast<std::size_t>(ch)] += static_cast<float>(s);
        }
    }
  });
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  WMNAV_REQUIRE(av.rank() == 2 && bv.rank() == 2, "matmul: operands must be 2-D");
  const int m = trans_a ? av.dim(1) : av.dim(0);
  const int k = trans_a ? av.dim(0) : av.dim(1);
  const int kb = trans_b ? bv.dim(1) : bv.dim(0);
  const int n = trans_b ? bv.dim(0) : bv.dim(1);
  WMNAV_REQUIRE(k == kb, "matmul: inner dimension mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Tensor out({m, n});
  kernels::gemm(m, n, k, av.data(), trans_a, bv.data(), trans_b, out.data(), false);
  return a.tape->push(std::move(out), {a, b}, [a, b, m, n, k, trans_a, trans_b](Tape& t, int self) {
    const Tensor& g = t.grad(self);  // [m,n]
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad(a.id);
      const float* bd = t.value(b.id).data();
      if (!trans_a)  // dA[m,k] = G * op(B)^T
        kernels::gemm(m, k, n, g.data(), false, bd, !trans_b, ga.data(), true);
      else  // dA[k,m] = op(B) * G^T
        kernels::gemm(k, m, n, bd, trans_b, g.data(), true, ga.data(), true);
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      const float* ad = t.value(a.id).data();
      if (!trans_b)  // dB[k,n] = op(A)^T * G
        kernels::gemm(k, n, m, ad, !trans_a, g.data(), false, gb.data(), true);
      else  // dB[n,k] = G^T * op(A)
        kernels::gemm(n, k, m, g.data(), true, ad, trans_a, gb.data(), true);
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  WMNAV_REQUIRE(av.rank() == 2, "transpose: operand must be 2-D");
  const int r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = av[static_cast<std::size_t>(i) * c + j];
  return a.tape->push(std::move(out), {a}, [a, r, c](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
  });
}

Var conv2d(Var x, Var w, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  WMNAV_REQUIRE(xv.rank() == 4 && wv.rank() == 4 && wv.dim(1) == xv.dim(1) && wv.dim(2) == wv.dim(3),
                "conv2d: expected x [N,C,H,W] and w [O,C,k,k], got " + shape_str(xv.shape()) + ", " +
                    shape_str(wv.shape()));
  const kernels::ConvGeom geom{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), stride, pad};
  const int o = wv.dim(0), n = geom.batch, hw = geom.out_h() * geom.out_w();
  const int rows = geom.col_rows(), cols = geom.col_cols();
  std::vector<float> colbuf(static_cast<std::size_t>(rows) * cols);
  kernels::im2col(geom, xv.data(), colbuf.data());
  std::vector<float> ocn(static_cast<std::size_t>(o) * cols);  // [O, N*HW]
  kernels::gemm(o, cols, rows, wv.data(), false, colbuf.data(), false, ocn.data(), false);
  Tensor out({n, o, geom.out_h(), geom.out_w()});
  kernels::swap_leading(o, n, hw, ocn.data(), out.data());
  return x.tape->push(std::move(out), {x, w}, [x, w, geom, o, n, hw, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    std::vector<float> gocn(static_cast<std::size_t>(o) * cols);
    kernels::swap_leading(n, o, hw, g.data(), gocn.data());
    if (t.requires_grad(w.id)) {
      std::vector<float> colbuf(static_cast<std::size_t>(rows) * cols);
      kernels::im2col(geom, t.value(x.id).data(), colbuf.data());
      kernels::gemm(o, rows, cols, gocn.data(), false, colbuf.data(), true, t.grad(w.id).data(), true);
    }
    if (t.requires_grad(x.id)) {
      std::vector<float> gcol(static_cast<std::size_t>(rows) * cols);
      kernels::gemm(rows, cols, o, t.value(w.id).data(), true, gocn.data(), false, gcol.data(), false);
      kernels::col2im(geom, gcol.data(), t.grad(x.id).data());
    }
  });
}

Var conv_transpose2d(Var x, Var w, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  WMNAV_REQUIRE(xv.rank() == 4 && wv.rank() == 4 && wv.dim(0) == xv.dim(1) && wv.dim(2) == wv.dim(3),
                "conv_transpose2d: expected x [N,C,H,W] and w [C,O,k,k]");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int o = wv.dim(1), k = wv.dim(2);
  const int oh = (h - 1) * stride - 2 * pad + k, ow = (wd - 1) * stride - 2 * pad + k;
  // The output geometry is the input of the conv2d this op is adjoint to.
  const kernels::ConvGeom geom{n, o, oh, ow, k, stride, pad};
  WMNAV_REQUIRE(geom.out_h() == h && geom.out_w() == wd, "conv_transpose2d: inconsistent geometry");
  const int rows = geom.col_rows(), cols = geom.col_cols(), hw = h * wd;
  std::vector<float> xcn(static_cast<std::size_t>(c) * cols);  // [C, N*HW]
  kernels::swap_leading(n, c, hw, xv.data(), xcn.data());
  std::vector<float> colbuf(static_cast<std::size_t>(rows) * cols);
  kernels::gemm(rows, cols, c, wv.data(), true, xcn.data(), false, colbuf.data(), false);
  Tensor out({n, o, oh, ow});
  kernels::col2im(geom, colbuf.data(), out.data());
  return x.tape->push(std::move(out), {x, w}, [x, w, geom, c, n, hw, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    std::vector<float> gcol(static_cast<std::size_t>(rows) * cols);
    kernels::im2col(geom, g.data(), gcol.data());
    if (t.requires_grad(w.id)) {
      std::vector<float> xcn(static_cast<std::size_t>(c) * cols);
      kernels::swap_leading(n, c, hw, t.value(x.id).data(), xcn.data());
      kernels::gemm(c, rows, cols, xcn.data(), false, gcol.data(), true, t.grad(w.id).data(), true);
    }
    if (t.requires_grad(x.id)) {
      std::vector<float> gxcn(static_cast<std::size_t>(c) * cols);
      kernels::gemm(c, cols, rows, t.value(w.id).data(), false, gcol.data(), false, gxcn.data(), false);
      std::vector<float> gx(gxcn.size());
      kernels::swap_leading(c, n, hw, gxcn.data(), gx.data());
      accumulate(t.grad(x.id), Tensor(t.value(x.id).shape(), std::move(gx)));
    }
  });
}

Var relu(Var a) {
  return unary(a, [](float x) { return x > 0.0f ? x : 0.0f; }, [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Var leaky_relu(Var a, float slope) {
  return unary(
      a, [slope](float x) { return x > 0.0f ? x : slope * x; },
      [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

Var sigmoid(Var a) {
  return unary(a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); }, [](float, float y) { return y * (1.0f - y); });
}

Var tanh(Var a) {
  return unary(a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Var exp(Var a) {
  return unary(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Var log(Var a) {
  return unary(a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Var square(Var a) {
  return unary(a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Var clamp(Var a, float lo, float hi) {
  return unary(
      a, [lo, hi](float x) { return std::clamp(x, lo, hi); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Var minimum(Var a, Var b) {
  require_same(a, b, "minimum");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], bv[i]);
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    // Ties route the gradient to the first operand.
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] <= bv[i]) {
        if (t.requires_grad(a.id)) t.grad(a.id)[i] += g[i];
      } else if (t.requires_grad(b.id)) {
        t.grad(b.id)[i] += g[i];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->push(std::move(out), {a}, [a](Tape& t, int self) {
    if (t.requires_grad(a.id)) accumulate(t.grad(a.id), t.grad(self));
  });
}

Var sum(Var a) {
  double s = 0;
  for (float v : a.value().vec()) s += v;
  return a.tape->push(Tensor::scalar(static_cast<float>(s)), {a}, [a](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const float g = t.grad(self)[0];
    for (float& v : t.grad(a.id).vec()) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0f / static_cast<float>(a.value().size())); }

namespace {
void require_2d(const Var& a, const char* op) {
  WMNAV_REQUIRE(a.value().rank() == 2, std::string(op) + ": expected [N,F], got " + shape_str(a.shape()));
}
}  // namespace

Var sum_rows(Var a) {
  require_2d(a, "sum_rows");
  const int n = a.shape()[0], f = a.shape()[1];
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < f; ++j) s += a.value()[static_cast<std::size_t>(i) * f + j];
    out[static_cast<std::size_t>(i)] = static_cast<float>(s);
  }
  return a.tape->push(std::move(out), {a}, [a, n, f](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < f; ++j) ga[static_cast<std::size_t>(i) * f + j] += g[static_cast<std::size_t>(i)];
  });
}

Var logsumexp_rows(Var a) {
  require_2d(a, "logsumexp_rows");
  const int n = a.shape()[0], f = a.shape()[1];
  Tensor out({n});
  const Tensor& av = a.value();
  for (int i = 0; i < n; ++i) {
    const float* row = av.data() + static_cast<std::size_t>(i) * f;
    const float mx = *std::max_element(row, row + f);
    double s = 0;
    for (int j = 0; j < f; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    out[static_cast<std::size_t>(i)] = mx + static_cast<float>(std::log(s));
  }
  return a.tape->push(std::move(out), {a}, [a, n, f](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& av = t.value(a.id);
    Tensor& ga = t.grad(a.id);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < f; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * f + j;
        ga[k] += g[static_cast<std::size_t>(i)] * std::exp(av[k] - y[static_cast<std::size_t>(i)]);
      }
  });
}

Var row_norm(Var a) {
  require_2d(a, "row_norm");
  const int n = a.shape()[0], f = a.shape()[1];
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < f; ++j) {
      const double v = a.value()[static_cast<std::size_t>(i) * f + j];
      s += v * v;
    }
    out[static_cast<std::size_t>(i)] = static_cast<float>(std::sqrt(s));
  }
  return a.tape->push(std::move(out), {a}, [a, n, f](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& av = t.value(a.id);
    Tensor& ga = t.grad(a.id);
    for (int i = 0; i < n; ++i) {
      const float norm = y[static_cast<std::size_t>(i)];
      if (norm == 0.0f) continue;  // subgradient 0 at the origin
      for (int j = 0; j < f; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * f + j;
        ga[k] += g[static_cast<std::size_t>(i)] * av[k] / norm;
      }
    }
  });
}

Var l2_normalize_rows(Var a) {
  require_2d(a, "l2_normalize_rows");
  const int n = a.shape()[0], f = a.shape()[1];
  constexpr double kEps = 1e-12;
  Tensor out(a.shape());
  std::vector<float> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < f; ++j) {
      const double v = a.value()[static_cast<std::size_t>(i) * f + j];
      s += v * v;
    }
    const float norm = static_cast<float>(std::sqrt(s + kEps));
    norms[static_cast<std::size_t>(i)] = norm;
    for (int j = 0; j < f; ++j)
      out[static_cast<std::size_t>(i) * f + j] = a.value()[static_cast<std::size_t>(i) * f + j] / norm;
  }
  return a.tape->push(std::move(out), {a}, [a, n, f, norms](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(a.id);
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * f;
      double gy = 0;
      for (int j = 0; j < f; ++j) gy += static_cast<double>(g[base + j]) * y[base + j];
      for (int j = 0; j < f; ++j)
        ga[base + j] += (g[base + j] - static_cast<float>(gy) * y[base + j]) / norms[static_cast<std::size_t>(i)];
    }
  });
}

Var slice_cols(Var a, int begin, int end) {
  require_2d(a, "slice_cols");
  const int n = a.shape()[0], f = a.shape()[1], w = end - begin;
  WMNAV_REQUIRE(0 <= begin && begin < end && end <= f, "slice_cols: bad range");
  Tensor out({n, w});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(i) * w + j] = a.value()[static_cast<std::size_t>(i) * f + begin + j];
  return a.tape->push(std::move(out), {a}, [a, n, f, w, begin](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) ga[static_cast<std::size_t>(i) * f + begin + j] += g[static_cast<std::size_t>(i) * w + j];
  });
}

Var concat_cols(Var a, Var b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  WMNAV_REQUIRE(a.shape()[0] == b.shape()[0], "concat_cols: row count mismatch");
  const int n = a.shape()[0], fa = a.shape()[1], fb = b.shape()[1], f = fa + fb;
  Tensor out({n, f});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < fa; ++j) out[static_cast<std::size_t>(i) * f + j] = a.value()[static_cast<std::size_t>(i) * fa + j];
    for (int j = 0; j < fb; ++j)
      out[static_cast<std::size_t>(i) * f + fa + j] = b.value()[static_cast<std::size_t>(i) * fb + j];
  }
  return a.tape->push(std::move(out), {a, b}, [a, b, n, fa, fb, f](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad(a.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < fa; ++j) ga[static_cast<std::size_t>(i) * fa + j] += g[static_cast<std::size_t>(i) * f + j];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < fb; ++j)
          gb[static_cast<std::size_t>(i) * fb + j] += g[static_cast<std::size_t>(i) * f + fa + j];
    }
  });
}

Var pick(Var a, std::vector<int> index) {
  require_2d(a, "pick");
  const int n = a.shape()[0], f = a.shape()[1];
  WMNAV_REQUIRE(static_cast<int>(index.size()) == n, "pick: one index per row required");
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    WMNAV_REQUIRE(index[static_cast<std::size_t>(i)] >= 0 && index[static_cast<std::size_t>(i)] < f, "pick: index out of range");
    out[static_cast<std::size_t>(i)] = a.value()[static_cast<std::size_t>(i) * f + index[static_cast<std::size_t>(i)]];
  }
  return a.tape->push(std::move(out), {a}, [a, f, index = std::move(index)](Tape& t, int self) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a.id);
    for (std::size_t i = 0; i < index.size(); ++i) ga[i * static_cast<std::size_t>(f) + index[i]] += g[i];
  });
}

Var bce_with_logits_clamped(Var logits, const Tensor& targets) {
  WMNAV_REQUIRE(logits.value().size() == targets.size(), "bce: logits/targets size mismatch");
  constexpr float kLo = 1e-6f, kHi = 1.0f - 1e-6f;
  const Tensor& lv = logits.value();
  double s = 0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const float p = std::clamp(1.0f / (1.0f + std::exp(-lv[i])), kLo, kHi);
    const float y = targets[i];
    s -= y * std::log(p) + (1.0f - y) * std::log(1.0f - p);
  }
  return logits.tape->push(Tensor::scalar(static_cast<float>(s)), {logits}, [logits, targets](Tape& t, int self) {
    if (!t.requires_grad(logits.id)) return;
    const float g = t.grad(self)[0];
    const Tensor& lv = t.value(logits.id);
    Tensor& gl = t.grad(logits.id);
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const float p = 1.0f / (1.0f + std::exp(-lv[i]));
      if (p < kLo || p > kHi) continue;  // clamped region has zero gradient
      gl[i] += g * (p - targets[i]);
    }
  });
}

}  // namespace ad
}  // namespace wmnav

#include "lensless/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace lensless {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an empty Var");
  return tape_->value(*this);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.value.set_requires_grad(requires_grad);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("op mixes Vars from different tapes");
    needs = needs || nodes_[p.index()].requires_grad;
  }
  needs = needs && grad_enabled_;
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  n.value.set_requires_grad(needs);
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape() != this || v.index() >= nodes_.size()) {
    throw std::invalid_argument("Var does not belong to this tape");
  }
  return nodes_[v.index()];
}

Tape::Node& Tape::node(Var v) {
  return const_cast<Node&>(static_cast<const Tape&>(*this).node(v));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad) throw std::logic_error("node does not require grad");
  if (n.grad.empty()) throw std::logic_error("grad() before backward()");
  return n.grad;
}

Tensor* Tape::grad_slot(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                shape_to_string(ln.value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!ln.requires_grad) throw std::invalid_argument("loss does not depend on any leaf");
  nodes_[loss.index()].grad = Tensor(ln.value.shape(), 1.0);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
  for (std::size_t i = 0; i <= loss.index(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  }
}

namespace ad {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("op on an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw std::invalid_argument("op mixes Vars from different tapes");
  return t;
}

void accumulate(Tensor* g, const Tensor& delta) {
  if (!g) return;
  for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += delta[i];
}

template <typename F>
Var unary(Var a, F&& forward_fn, std::function<double(double)> dydx) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor y = x;
  for (double& v : y.data()) v = forward_fn(v);
  return tape.record(std::move(y), {a}, [a, dydx](Tape& t, const Tensor& gout) {
    Tensor* g = t.grad_slot(a);
    if (!g) return;
    const Tensor& xv = t.value(a);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gout[i] * dydx(xv[i]);
  });
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " +
                                std::to_string(rank) + ", got shape " +
                                shape_to_string(t.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor y = a.value() + b.value();
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    accumulate(tp.grad_slot(a), g);
    accumulate(tp.grad_slot(b), g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor y = a.value() - b.value();
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    accumulate(tp.grad_slot(a), g);
    if (Tensor* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor y = hadamard(a.value(), b.value());
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[i] / bv[i];
    }
    if (Tensor* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value() * s, {a}, [a, s](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[i] * s;
    }
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor y = a.value();
  for (double& v : y.data()) v += s;
  return t.record(std::move(y), {a},
                  [a](Tape& tp, const Tensor& g) { accumulate(tp.grad_slot(a), g); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var silu(Var a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  return t.record(Tensor::scalar(lensless::sum(a.value())), {a},
                  [a](Tape& tp, const Tensor& g) {
                    if (Tensor* ga = tp.grad_slot(a)) {
                      for (double& v : ga->data()) v += g[0];
                    }
                  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 && av.rank() != 3) {
    throw std::invalid_argument("matmul: left operand must have rank 2 or 3, got " +
                                shape_to_string(av.shape()));
  }
  require_rank(bv, 2, "matmul", "right operand");
  const std::size_t K = av.shape().back();
  if (bv.dim(0) != K) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_to_string(av.shape()) +
                                " x " + shape_to_string(bv.shape()));
  }
  const std::size_t M = bv.dim(1);
  const std::size_t rows = av.size() / K;
  Shape out_shape = av.shape();
  out_shape.back() = M;
  Tensor y(out_shape, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      const double x = av[r * K + k];
      const double* brow = &bv.data()[k * M];
      double* yrow = &y.data()[r * M];
      for (std::size_t m = 0; m < M; ++m) yrow[m] += x * brow[m];
    }
  }
  return t.record(std::move(y), {a, b}, [a, b, rows, K, M](Tape& tp, const Tensor& g) {
    const Tensor& av2 = tp.value(a);
    const Tensor& bv2 = tp.value(b);
    if (Tensor* ga = tp.grad_slot(a)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (std::size_t m = 0; m < M; ++m) acc += g[r * M + m] * bv2[k * M + m];
          (*ga)[r * K + k] += acc;
        }
      }
    }
    if (Tensor* gb = tp.grad_slot(b)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < K; ++k) {
          const double x = av2[r * K + k];
          for (std::size_t m = 0; m < M; ++m) (*gb)[k * M + m] += x * g[r * M + m];
        }
      }
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t N, C, H, W, F, kh, kw, stride, pad, OH, OW;
};

ConvGeometry conv_geometry(const Tensor& x, std::size_t F, std::size_t C_kernel, std::size_t kh,
                           std::size_t kw, std::size_t stride, std::size_t pad, const char* op) {
  require_rank(x, 4, op, "input");
  if (stride == 0) throw std::invalid_argument(std::string(op) + ": stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), F, kh, kw, stride, pad, 0, 0};
  if (C_kernel != g.C) {
    throw std::invalid_argument(std::string(op) + ": channel dimension mismatch, input has " +
                                std::to_string(g.C) + " channels but kernel expects " +
                                std::to_string(C_kernel));
  }
  if (kh > g.H + 2 * pad) {
    throw std::invalid_argument(std::string(op) + ": kernel height " + std::to_string(kh) +
                                " exceeds padded input height " + std::to_string(g.H + 2 * pad));
  }
  if (kw > g.W + 2 * pad) {
    throw std::invalid_argument(std::string(op) + ": kernel width " + std::to_string(kw) +
                                " exceeds padded input width " + std::to_string(g.W + 2 * pad));
  }
  g.OH = (g.H + 2 * pad - kh) / stride + 1;
  g.OW = (g.W + 2 * pad - kw) / stride + 1;
  return g;
}

// Output columns ox whose input column ox*stride + kx - pad lies in [0, W).
inline void valid_range(std::size_t k, std::size_t pad, std::size_t stride, std::size_t in,
                        std::size_t out, std::size_t& lo, std::size_t& hi) {
  // ox*stride + k >= pad  and  ox*stride + k - pad <= in - 1
  lo = (k >= pad) ? 0 : (pad - k + stride - 1) / stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(pad) -
                             static_cast<std::ptrdiff_t>(k);
  if (top < 0) {
    hi = 0;
    lo = 0;
    return;
  }
  hi = std::min(out, static_cast<std::size_t>(top) / stride + 1);
  if (lo > hi) lo = hi;
}

// Core correlation loop shared by dense and depthwise convolution. For each
// (n, out channel f, in channel c) pair it calls body(xplane, yplane, kernel).
template <typename Body>
void for_each_tap(const ConvGeometry& g, const double* kernel, Body&& body) {
  for (std::size_t ky = 0; ky < g.kh; ++ky) {
    std::size_t oy_lo, oy_hi;
    valid_range(ky, g.pad, g.stride, g.H, g.OH, oy_lo, oy_hi);
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      std::size_t ox_lo, ox_hi;
      valid_range(kx, g.pad, g.stride, g.W, g.OW, ox_lo, ox_hi);
      const double w = kernel[ky * g.kw + kx];
      for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
        const std::size_t iy = oy * g.stride + ky - g.pad;
        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
          const std::size_t ix = ox * g.stride + kx - g.pad;
          body(iy * g.W + ix, oy * g.OW + ox, ky * g.kw + kx, w);
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  Tape& t = tape_of(input, kernel);
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  require_rank(k, 4, "conv2d", "kernel");
  const ConvGeometry g = conv_geometry(x, k.dim(0), k.dim(1), k.dim(2), k.dim(3), stride, padding,
                                       "conv2d");
  Tensor y({g.N, g.F, g.OH, g.OW}, 0.0);
  const std::size_t in_plane = g.H * g.W, out_plane = g.OH * g.OW, kplane = g.kh * g.kw;
  for (std::size_t n = 0; n < g.N; ++n) {
    for (std::size_t f = 0; f < g.F; ++f) {
      double* yp = &y.data()[(n * g.F + f) * out_plane];
      for (std::size_t c = 0; c < g.C; ++c) {
        const double* xp = &x.data()[(n * g.C + c) * in_plane];
        const double* kp = &k.data()[(f * g.C + c) * kplane];
        for_each_tap(g, kp, [&](std::size_t xi, std::size_t yi, std::size_t, double w) {
          yp[yi] += w * xp[xi];
        });
      }
    }
  }
  return t.record(std::move(y), {input, kernel}, [input, kernel, g](Tape& tp, const Tensor& gout) {
    const Tensor& xv = tp.value(input);
    const Tensor& kv = tp.value(kernel);
    Tensor* gx = tp.grad_slot(input);
    Tensor* gk = tp.grad_slot(kernel);
    const std::size_t in_plane = g.H * g.W, out_plane = g.OH * g.OW, kplane = g.kh * g.kw;
    for (std::size_t n = 0; n < g.N; ++n) {
      for (std::size_t f = 0; f < g.F; ++f) {
        const double* gp = &gout.data()[(n * g.F + f) * out_plane];
        for (std::size_t c = 0; c < g.C; ++c) {
          const double* xp = &xv.data()[(n * g.C + c) * in_plane];
          const double* kp = &kv.data()[(f * g.C + c) * kplane];
          double* gxp = gx ? &gx->data()[(n * g.C + c) * in_plane] : nullptr;
          double* gkp = gk ? &gk->data()[(f * g.C + c) * kplane] : nullptr;
          for_each_tap(g, kp, [&](std::size_t xi, std::size_t yi, std::size_t ki, double w) {
            if (gxp) gxp[xi] += w * gp[yi];
            if (gkp) gkp[ki] += xp[xi] * gp[yi];
          });
        }
      }
    }
  });
}

Var depthwise_conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  Tape& t = tape_of(input, kernel);
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  require_rank(k, 3, "depthwise_conv2d", "kernel");
  const ConvGeometry g =
      conv_geometry(x, x.rank() == 4 ? x.dim(1) : 0, k.dim(0), k.dim(1), k.dim(2), stride,
                    padding, "depthwise_conv2d");
  Tensor y({g.N, g.C, g.OH, g.OW}, 0.0);
  const std::size_t in_plane = g.H * g.W, out_plane = g.OH * g.OW, kplane = g.kh * g.kw;
  for (std::size_t n = 0; n < g.N; ++n) {
    for (std::size_t c = 0; c < g.C; ++c) {
      double* yp = &y.data()[(n * g.C + c) * out_plane];
      const double* xp = &x.data()[(n * g.C + c) * in_plane];
      const double* kp = &k.data()[c * kplane];
      for_each_tap(g, kp, [&](std::size_t xi, std::size_t yi, std::size_t, double w) {
        yp[yi] += w * xp[xi];
      });
    }
  }
  return t.record(std::move(y), {input, kernel}, [input, kernel, g](Tape& tp, const Tensor& gout) {
    const Tensor& xv = tp.value(input);
    const Tensor& kv = tp.value(kernel);
    Tensor* gx = tp.grad_slot(input);
    Tensor* gk = tp.grad_slot(kernel);
    const std::size_t in_plane = g.H * g.W, out_plane = g.OH * g.OW, kplane = g.kh * g.kw;
    for (std::size_t n = 0; n < g.N; ++n) {
      for (std::size_t c = 0; c < g.C; ++c) {
        const double* gp = &gout.data()[(n * g.C + c) * out_plane];
        const double* xp = &xv.data()[(n * g.C + c) * in_plane];
        const double* kp = &kv.data()[c * kplane];
        double* gxp = gx ? &gx->data()[(n * g.C + c) * in_plane] : nullptr;
        double* gkp = gk ? &gk->data()[c * kplane] : nullptr;
        for_each_tap(g, kp, [&](std::size_t xi, std::size_t yi, std::size_t ki, double w) {
          if (gxp) gxp[xi] += w * gp[yi];
          if (gkp) gkp[ki] += xp[xi] * gp[yi];
        });
      }
    }
  });
}

Var channel_bias(Var input, Var bias) {
  Tape& t = tape_of(input, bias);
  const Tensor& x = input.value();
  const Tensor& b = bias.value();
  require_rank(x, 4, "channel_bias", "input");
  require_rank(b, 1, "channel_bias", "bias");
  if (b.dim(0) != x.dim(1)) {
    throw std::invalid_argument("channel_bias: bias length " + std::to_string(b.dim(0)) +
                                " does not match channel count " + std::to_string(x.dim(1)));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y = x;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i) y[(n * C + c) * plane + i] += b[c];
  return t.record(std::move(y), {input, bias}, [input, bias, N, C, plane](Tape& tp, const Tensor& g) {
    accumulate(tp.grad_slot(input), g);
    if (Tensor* gb = tp.grad_slot(bias)) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < plane; ++i) (*gb)[c] += g[(n * C + c) * plane + i];
    }
  });
}

Var concat_channels(std::initializer_list<Var> parts) {
  return concat_channels(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Tape& t = tape_of(parts[0]);
  const Tensor& first = parts[0].value();
  require_rank(first, 4, "concat_channels", "input");
  const std::size_t N = first.dim(0), H = first.dim(2), W = first.dim(3), plane = H * W;
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    const Tensor& v = p.value();
    require_rank(v, 4, "concat_channels", "input");
    if (v.dim(0) != N || v.dim(2) != H || v.dim(3) != W) {
      throw std::invalid_argument("concat_channels: incompatible shapes " +
                                  shape_to_string(first.shape()) + " and " +
                                  shape_to_string(v.shape()));
    }
    channels.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor y({N, total, H, W}, 0.0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = parts[i].value();
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(&v.data()[n * channels[i] * plane], channels[i] * plane,
                  &y.data()[(n * total + offset) * plane]);
    }
    offset += channels[i];
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.record(std::move(y), parts, [saved, channels, N, total, plane](Tape& tp, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (Tensor* gp = tp.grad_slot(saved[i])) {
        for (std::size_t n = 0; n < N; ++n) {
          const double* src = &g.data()[(n * total + off) * plane];
          double* dst = &gp->data()[n * channels[i] * plane];
          for (std::size_t j = 0; j < channels[i] * plane; ++j) dst[j] += src[j];
        }
      }
      off += channels[i];
    }
  });
}

Var slice_channels(Var input, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(input);
  const Tensor& x = input.value();
  require_rank(x, 4, "slice_channels", "input");
  const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (count == 0 || begin + count > C) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside " + std::to_string(C) +
                                " channels");
  }
  Tensor y({N, count, x.dim(2), x.dim(3)}, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(&x.data()[(n * C + begin) * plane], count * plane, &y.data()[n * count * plane]);
  }
  return t.record(std::move(y), {input}, [input, N, C, begin, count, plane](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_slot(input)) {
      for (std::size_t n = 0; n < N; ++n) {
        const double* src = &g.data()[n * count * plane];
        double* dst = &gx->data()[(n * C + begin) * plane];
        for (std::size_t j = 0; j < count * plane; ++j) dst[j] += src[j];
      }
    }
  });
}

Var crop2d(Var input, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  Tape& t = tape_of(input);
  const Tensor& x = input.value();
  require_rank(x, 4, "crop2d", "input");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (height == 0 || width == 0 || top + height > H || left + width > W) {
    throw std::invalid_argument("crop2d: window exceeds input " + shape_to_string(x.shape()));
  }
  Tensor y({x.dim(0), x.dim(1), height, width}, 0.0);
  for (std::size_t p = 0; p < NC; ++p)
    for (std::size_t r = 0; r < height; ++r)
      std::copy_n(&x.data()[(p * H + top + r) * W + left], width,
                  &y.data()[(p * height + r) * width]);
  return t.record(std::move(y), {input},
                  [input, NC, H, W, top, left, height, width](Tape& tp, const Tensor& g) {
                    if (Tensor* gx = tp.grad_slot(input)) {
                      for (std::size_t p = 0; p < NC; ++p)
                        for (std::size_t r = 0; r < height; ++r)
                          for (std::size_t c = 0; c < width; ++c)
                            (*gx)[(p * H + top + r) * W + left + c] +=
                                g[(p * height + r) * width + c];
                    }
                  });
}

Var upsample_nearest(Var input, std::size_t factor) {
  Tape& t = tape_of(input);
  const Tensor& x = input.value();
  require_rank(x, 4, "upsample_nearest", "input");
  if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = H * factor, OW = W * factor;
  Tensor y({x.dim(0), x.dim(1), OH, OW}, 0.0);
  for (std::size_t p = 0; p < NC; ++p)
    for (std::size_t r = 0; r < OH; ++r)
      for (std::size_t c = 0; c < OW; ++c)
        y[(p * OH + r) * OW + c] = x[(p * H + r / factor) * W + c / factor];
  return t.record(std::move(y), {input}, [input, NC, H, W, factor](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_slot(input)) {
      const std::size_t OH = H * factor, OW = W * factor;
      for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t r = 0; r < OH; ++r)
          for (std::size_t c = 0; c < OW; ++c)
            (*gx)[(p * H + r / factor) * W + c / factor] += g[(p * OH + r) * OW + c];
    }
  });
}

Var downsample_nearest(Var input, std::size_t factor) {
  Tape& t = tape_of(input);
  const Tensor& x = input.value();
  require_rank(x, 4, "downsample_nearest", "input");
  if (factor == 0) throw std::invalid_argument("downsample_nearest: factor must be positive");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % factor || W % factor) {
    throw std::invalid_argument("downsample_nearest: spatial dims " + shape_to_string(x.shape()) +
                                " not divisible by " + std::to_string(factor));
  }
  const std::size_t OH = H / factor, OW = W / factor;
  Tensor y({x.dim(0), x.dim(1), OH, OW}, 0.0);
  for (std::size_t p = 0; p < NC; ++p)
    for (std::size_t r = 0; r < OH; ++r)
      for (std::size_t c = 0; c < OW; ++c)
        y[(p * OH + r) * OW + c] = x[(p * H + r * factor) * W + c * factor];
  return t.record(std::move(y), {input}, [input, NC, H, W, factor](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_slot(input)) {
      const std::size_t OH = H / factor, OW = W / factor;
      for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t r = 0; r < OH; ++r)
          for (std::size_t c = 0; c < OW; ++c)
            (*gx)[(p * H + r * factor) * W + c * factor] += g[(p * OH + r) * OW + c];
    }
  });
}

Var reshape(Var input, Shape shape) {
  Tape& t = tape_of(input);
  if (shape_volume(shape) != input.value().size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(input.value().shape()) +
                                " as " + shape_to_string(shape));
  }
  return t.record(input.value().reshaped(std::move(shape)), {input},
                  [input](Tape& tp, const Tensor& g) { accumulate(tp.grad_slot(input), g); });
}

namespace {

struct WindowGeometry {
  std::size_t N, C, H, W, wh, ww, nh, nw;
  // Flat index pairs (image index, token index) in a fixed order.
  std::size_t image_index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * C + c) * H + y) * W + x;
  }
  std::size_t token_index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const std::size_t window = (n * nh + y / wh) * nw + x / ww;
    const std::size_t pos = (y % wh) * ww + (x % ww);
    return (window * (wh * ww) + pos) * C + c;
  }
};

WindowGeometry window_geometry(const Shape& s, std::size_t wh, std::size_t ww) {
  if (s.size() != 4) throw std::invalid_argument("window_tokens: input must have rank 4");
  if (wh == 0 || ww == 0 || s[2] % wh || s[3] % ww) {
    throw std::invalid_argument("window_tokens: window " + std::to_string(wh) + "x" +
                                std::to_string(ww) + " does not tile " + shape_to_string(s));
  }
  return {s[0], s[1], s[2], s[3], wh, ww, s[2] / wh, s[3] / ww};
}

}  // namespace

Var window_tokens(Var input, std::size_t win_h, std::size_t win_w) {
  Tape& t = tape_of(input);
  const Tensor& x = input.value();
  const WindowGeometry g = window_geometry(x.shape(), win_h, win_w);
  Tensor y({g.N * g.nh * g.nw, g.wh * g.ww, g.C}, 0.0);
  for (std::size_t n = 0; n < g.N; ++n)
    for (std::size_t c = 0; c < g.C; ++c)
      for (std::size_t yy = 0; yy < g.H; ++yy)
        for (std::size_t xx = 0; xx < g.W; ++xx)
          y[g.token_index(n, c, yy, xx)] = x[g.image_index(n, c, yy, xx)];
  return t.record(std::move(y), {input}, [input, g](Tape& tp, const Tensor& gout) {
    if (Tensor* gx = tp.grad_slot(input)) {
      for (std::size_t n = 0; n < g.N; ++n)
        for (std::size_t c = 0; c < g.C; ++c)
          for (std::size_t yy = 0; yy < g.H; ++yy)
            for (std::size_t xx = 0; xx < g.W; ++xx)
              (*gx)[g.image_index(n, c, yy, xx)] += gout[g.token_index(n, c, yy, xx)];
    }
  });
}

Var window_merge(Var tokens, const Shape& image_shape, std::size_t win_h, std::size_t win_w) {
  Tape& t = tape_of(tokens);
  const Tensor& x = tokens.value();
  const WindowGeometry g = window_geometry(image_shape, win_h, win_w);
  const Shape expected{g.N * g.nh * g.nw, g.wh * g.ww, g.C};
  if (x.shape() != expected) {
    throw std::invalid_argument("window_merge: tokens " + shape_to_string(x.shape()) +
                                " do not match image " + shape_to_string(image_shape));
  }
  Tensor y(image_shape, 0.0);
  for (std::size_t n = 0; n < g.N; ++n)
    for (std::size_t c = 0; c < g.C; ++c)
      for (std::size_t yy = 0; yy < g.H; ++yy)
        for (std::size_t xx = 0; xx < g.W; ++xx)
          y[g.image_index(n, c, yy, xx)] = x[g.token_index(n, c, yy, xx)];
  return t.record(std::move(y), {tokens}, [tokens, g](Tape& tp, const Tensor& gout) {
    if (Tensor* gx = tp.grad_slot(tokens)) {
      for (std::size_t n = 0; n < g.N; ++n)
        for (std::size_t c = 0; c < g.C; ++c)
          for (std::size_t yy = 0; yy < g.H; ++yy)
            for (std::size_t xx = 0; xx < g.W; ++xx)
              (*gx)[g.token_index(n, c, yy, xx)] += gout[g.image_index(n, c, yy, xx)];
    }
  });
}

Var cross_attention(Var query, Var key, Var value) {
  Tape& t = tape_of(query, key);
  tape_of(query, value);
  const Tensor& q = query.value();
  const Tensor& k = key.value();
  const Tensor& v = value.value();
  const bool batched = q.rank() == 3;
  if (q.rank() != 2 && q.rank() != 3) {
    throw std::invalid_argument("cross_attention: query must have rank 2 or 3");
  }
  if (k.rank() != q.rank() || v.rank() != q.rank()) {
    throw std::invalid_argument("cross_attention: query/key/value ranks differ");
  }
  const std::size_t B = batched ? q.dim(0) : 1;
  const std::size_t L = q.dim(q.rank() - 2), D = q.dim(q.rank() - 1);
  const std::size_t M = k.dim(k.rank() - 2);
  const std::size_t Dv = v.dim(v.rank() - 1);
  if (k.dim(k.rank() - 1) != D) {
    throw std::invalid_argument("cross_attention: feature dimension mismatch, query D=" +
                                std::to_string(D) + " key D=" + std::to_string(k.dim(k.rank() - 1)));
  }
  if (v.dim(v.rank() - 2) != M) {
    throw std::invalid_argument("cross_attention: key has " + std::to_string(M) +
                                " rows but value has " + std::to_string(v.dim(v.rank() - 2)));
  }
  if (batched && (k.dim(0) != B || v.dim(0) != B)) {
    throw std::invalid_argument("cross_attention: batch dimension mismatch");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  auto probs = std::make_shared<std::vector<double>>(B * L * M);
  Shape out_shape = batched ? Shape{B, L, Dv} : Shape{L, Dv};
  Tensor y(out_shape, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double* qb = &q.data()[b * L * D];
    const double* kb = &k.data()[b * M * D];
    const double* vb = &v.data()[b * M * Dv];
    for (std::size_t l = 0; l < L; ++l) {
      double* p = &(*probs)[(b * L + l) * M];
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < M; ++m) {
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) s += qb[l * D + d] * kb[m * D + d];
        p[m] = s * inv_sqrt_d;
        mx = std::max(mx, p[m]);
      }
      double z = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        p[m] = std::exp(p[m] - mx);
        z += p[m];
      }
      double* yl = &y.data()[(b * L + l) * Dv];
      for (std::size_t m = 0; m < M; ++m) {
        p[m] /= z;
        for (std::size_t d = 0; d < Dv; ++d) yl[d] += p[m] * vb[m * Dv + d];
      }
    }
  }
  return t.record(std::move(y), {query, key, value},
                  [query, key, value, probs, B, L, M, D, Dv, inv_sqrt_d](Tape& tp,
                                                                         const Tensor& g) {
                    const Tensor& q2 = tp.value(query);
                    const Tensor& k2 = tp.value(key);
                    const Tensor& v2 = tp.value(value);
                    Tensor* gq = tp.grad_slot(query);
                    Tensor* gk = tp.grad_slot(key);
                    Tensor* gv = tp.grad_slot(value);
                    std::vector<double> dscore(M);
                    for (std::size_t b = 0; b < B; ++b) {
                      for (std::size_t l = 0; l < L; ++l) {
                        const double* p = &(*probs)[(b * L + l) * M];
                        const double* gl = &g.data()[(b * L + l) * Dv];
                        double dot_pd = 0.0;
                        for (std::size_t m = 0; m < M; ++m) {
                          double dp = 0.0;
                          for (std::size_t d = 0; d < Dv; ++d)
                            dp += gl[d] * v2[(b * M + m) * Dv + d];
                          dscore[m] = dp;
                          dot_pd += dp * p[m];
                          if (gv) {
                            for (std::size_t d = 0; d < Dv; ++d)
                              (*gv)[(b * M + m) * Dv + d] += p[m] * gl[d];
                          }
                        }
                        for (std::size_t m = 0; m < M; ++m) {
                          const double ds = p[m] * (dscore[m] - dot_pd) * inv_sqrt_d;
                          if (ds == 0.0) continue;
                          for (std::size_t d = 0; d < D; ++d) {
                            if (gq) (*gq)[(b * L + l) * D + d] += ds * k2[(b * M + m) * D + d];
                            if (gk) (*gk)[(b * M + m) * D + d] += ds * q2[(b * L + l) * D + d];
                          }
                        }
                      }
                    }
                  });
}

}  // namespace ad

Tensor attention_weights(const Tensor& query, const Tensor& key) {
  if (query.rank() != 2 || key.rank() != 2 || query.dim(1) != key.dim(1)) {
    throw std::invalid_argument("attention_weights: expects [L,D] and [M,D]");
  }
  const std::size_t L = query.dim(0), M = key.dim(0), D = query.dim(1);
  Tensor p({L, M}, 0.0);
  const double inv = 1.0 / std::sqrt(static_cast<double>(D));
  for (std::size_t l = 0; l < L; ++l) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < M; ++m) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += query[l * D + d] * key[m * D + d];
      p[l * M + m] = s * inv;
      mx = std::max(mx, p[l * M + m]);
    }
    double z = 0.0;
    for (std::size_t m = 0; m < M; ++m) z += (p[l * M + m] = std::exp(p[l * M + m] - mx));
    for (std::size_t m = 0; m < M; ++m) p[l * M + m] /= z;
  }
  return p;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Tensor g(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

GradCheckReport gradcheck(const std::function<Var(Tape&, std::span<const Var>)>& build,
                          const std::vector<Tensor>& inputs, double h) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& in : inputs) leaves.push_back(tape.leaf(in, true));
  Var loss = build(tape, leaves);
  tape.backward(loss);

  GradCheckReport report;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    auto f = [&](const Tensor& x) {
      Tape probe_tape;
      probe_tape.set_grad_enabled(false);
      std::vector<Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        vs.push_back(probe_tape.leaf(j == which ? x : inputs[j], false));
      }
      return build(probe_tape, vs).value().item();
    };
    const Tensor fd = finite_diff_grad(f, inputs[which], h);
    const Tensor& an = tape.grad(leaves[which]);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double err = std::abs(an[i] - fd[i]) / std::max(1.0, std::abs(fd[i]));
      report.max_rel_error = std::max(report.max_rel_error, err);
    }
    report.coordinates += fd.size();
  }
  return report;
}

}  // namespace lensless

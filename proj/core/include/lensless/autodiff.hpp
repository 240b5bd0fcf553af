#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "lensless/tensor.hpp"

namespace lensless {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t index() const noexcept { return index_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

/// Records primitive operations in execution order and replays them in
/// reverse to accumulate gradients.
///
/// Nodes are appended only, so every parent index is smaller than its child's
/// and reverse index order is a valid topological order. References returned
/// by value() stay valid while the tape lives. A tape is meant for
/// a single thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backward` runs only if some parent requires grad.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Gradient buffer after backward(); throws for nodes without gradients.
  const Tensor& grad(Var v) const;

  /// Mutable gradient accumulator for op implementations, or nullptr when
  /// the node does not require a gradient.
  Tensor* grad_slot(Var v);

  /// Reverse sweep from a scalar loss. Gradients of every grad-requiring
  /// node are reset before the sweep.
  void backward(Var loss);

  /// With gradients disabled, ops record values only.
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::deque<Node> nodes_;  // stable references to recorded values
  bool grad_enabled_ = true;
};

namespace ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
Var abs(Var a);
Var relu(Var a);
Var silu(Var a);

Var sum(Var a);
Var mean(Var a);

/// [L,K] x [K,M] -> [L,M], or [B,L,K] x [K,M] -> [B,L,M].
Var matmul(Var a, Var b);

/// Cross-correlation of input [N,C,H,W] with kernel [F,C,kh,kw] and zero padding.
Var conv2d(Var input, Var kernel, std::size_t stride = 1, std::size_t padding = 0);

/// Per-channel correlation; kernel [C,kh,kw].
Var depthwise_conv2d(Var input, Var kernel, std::size_t stride = 1, std::size_t padding = 0);

/// Adds bias[c] to every element of channel c of [N,C,H,W].
Var channel_bias(Var input, Var bias);

Var concat_channels(std::span<const Var> parts);
Var concat_channels(std::initializer_list<Var> parts);
Var slice_channels(Var input, std::size_t begin, std::size_t count);

/// Spatial window on the last two axes of [N,C,H,W].
Var crop2d(Var input, std::size_t top, std::size_t left, std::size_t height, std::size_t width);

Var upsample_nearest(Var input, std::size_t factor);
/// Keeps every factor-th pixel starting at the origin.
Var downsample_nearest(Var input, std::size_t factor);

Var reshape(Var input, Shape shape);

/// [N,C,H,W] -> [N*(H/wh)*(W/ww), wh*ww, C] tokens, window-major.
Var window_tokens(Var input, std::size_t win_h, std::size_t win_w);
/// Inverse of window_tokens.
Var window_merge(Var tokens, const Shape& image_shape, std::size_t win_h, std::size_t win_w);

/// softmax(q k^T / sqrt(D)) v, for [L,D]/[M,D]/[M,Dv] or batched [B,L,D]/[B,M,D]/[B,M,Dv].
Var cross_attention(Var query, Var key, Var value);

}  // namespace ad

/// Row-stochastic attention matrix softmax(q k^T / sqrt(D)) for rank-2 inputs.
Tensor attention_weights(const Tensor& query, const Tensor& key);

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients of a scalar-valued graph against finite
/// differences on every input. Error per coordinate is
/// |analytic - fd| / max(1, |fd|).
GradCheckReport gradcheck(const std::function<Var(Tape&, std::span<const Var>)>& build,
                          const std::vector<Tensor>& inputs, double h = 1e-5);

}  // namespace lensless

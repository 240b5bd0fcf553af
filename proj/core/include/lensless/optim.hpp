#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

/// Named tensors in insertion order.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& operator[](std::string_view name) const;
  Tensor& operator[](std::string_view name);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }

  /// Prefixes every name, for merging several networks into one set.
  ParamSet prefixed(std::string_view prefix) const;
  /// Entries whose names start with `prefix`, with the prefix stripped.
  ParamSet extract(std::string_view prefix) const;
  void merge(const ParamSet& other);

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// A ParamSet registered on a tape as leaves.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamSet& params, bool requires_grad);
  /// Names bound to Vars that already live on a tape.
  BoundParams(Tape& tape, std::vector<std::pair<std::string, Var>> vars);

  Var operator[](std::string_view name) const;
  /// Gradients in ParamSet order; call after tape.backward().
  std::vector<Tensor> gradients() const;
  /// Sub-view of entries under `prefix` (names stripped of it).
  BoundParams scoped(std::string_view prefix) const;

 private:
  BoundParams() = default;
  Tape* tape_ = nullptr;
  std::vector<std::pair<std::string, Var>> vars_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Multiply the rate by decay_factor every decay_every steps (0 disables).
  double decay_factor = 0.8;
  std::size_t decay_every = 0;
};

class Adam {
 public:
  Adam(AdamConfig config, const ParamSet& params);

  void step(ParamSet& params, const std::vector<Tensor>& grads);
  double current_learning_rate() const;
  std::size_t steps() const noexcept { return steps_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  std::size_t steps_ = 0;
};

/// Exponential moving average: shadow <- rate * shadow + (1 - rate) * params.
class Ema {
 public:
  Ema(double rate, const ParamSet& init);
  void update(const ParamSet& params);
  const ParamSet& shadow() const noexcept { return shadow_; }
  double rate() const noexcept { return rate_; }

 private:
  double rate_;
  ParamSet shadow_;
};

}  // namespace lensless

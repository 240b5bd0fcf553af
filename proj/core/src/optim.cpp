#include "lensless/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace lensless {

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& [n, _] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& ParamSet::operator[](std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter " + std::string(name));
}

Tensor& ParamSet::operator[](std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamSet&>(*this)[name]);
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

ParamSet ParamSet::prefixed(std::string_view prefix) const {
  ParamSet out;
  for (const auto& [n, t] : entries_) out.add(std::string(prefix) + n, t);
  return out;
}

ParamSet ParamSet::extract(std::string_view prefix) const {
  ParamSet out;
  for (const auto& [n, t] : entries_) {
    if (n.starts_with(prefix)) out.add(n.substr(prefix.size()), t);
  }
  return out;
}

void ParamSet::merge(const ParamSet& other) {
  for (const auto& [n, t] : other.entries_) add(n, t);
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params, bool requires_grad) : tape_(&tape) {
  for (const auto& [n, t] : params.entries()) vars_.emplace_back(n, tape.leaf(t, requires_grad));
}

Var BoundParams::operator[](std::string_view name) const {
  for (const auto& [n, v] : vars_)
    if (n == name) return v;
  throw std::out_of_range("unknown bound parameter " + std::string(name));
}

std::vector<Tensor> BoundParams::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& [_, v] : vars_) out.push_back(tape_->grad(v));
  return out;
}

BoundParams::BoundParams(Tape& tape, std::vector<std::pair<std::string, Var>> vars)
    : tape_(&tape), vars_(std::move(vars)) {}

BoundParams BoundParams::scoped(std::string_view prefix) const {
  BoundParams out;
  out.tape_ = tape_;
  for (const auto& [n, v] : vars_) {
    if (n.starts_with(prefix)) out.vars_.emplace_back(n.substr(prefix.size()), v);
  }
  return out;
}

Adam::Adam(AdamConfig config, const ParamSet& params) : config_(config) {
  for (const auto& [_, t] : params.entries()) {
    m_.emplace_back(t.shape(), 0.0);
    v_.emplace_back(t.shape(), 0.0);
  }
}

double Adam::current_learning_rate() const {
  if (config_.decay_every == 0) return config_.learning_rate;
  const double periods = static_cast<double>(steps_ / config_.decay_every);
  return config_.learning_rate * std::pow(config_.decay_factor, periods);
}

void Adam::step(ParamSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != m_.size() || params.size() != m_.size()) {
    throw std::invalid_argument("Adam::step: parameter/gradient count mismatch");
  }
  const double lr = current_learning_rate();
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor& w = entries[p].second;
    const Tensor& g = grads[p];
    require_same_shape(w, g, "Adam::step");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[p][i] = config_.beta1 * m_[p][i] + (1.0 - config_.beta1) * g[i];
      v_[p][i] = config_.beta2 * v_[p][i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m_[p][i] / bc1;
      const double vhat = v_[p][i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

Ema::Ema(double rate, const ParamSet& init) : rate_(rate), shadow_(init) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("EMA rate must be in [0, 1]");
}

void Ema::update(const ParamSet& params) {
  auto& dst = shadow_.entries();
  const auto& src = params.entries();
  if (dst.size() != src.size()) throw std::invalid_argument("Ema::update: parameter count mismatch");
  for (std::size_t p = 0; p < dst.size(); ++p) {
    Tensor& s = dst[p].second;
    const Tensor& w = src[p].second;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = rate_ * s[i] + (1.0 - rate_) * w[i];
  }
}

}  // namespace lensless

#include "lensless/networks.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace lensless {
namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double std) {
  Tensor t = rng.normal_tensor(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] *= std;
  return t;
}

void add_separable(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  p.add(name + ".dw", random_tensor(rng, {in, 3, 3}, 1.0 / 3.0));
  p.add(name + ".pw", random_tensor(rng, {out, in, 1, 1}, std::sqrt(2.0 / static_cast<double>(in))));
  p.add(name + ".b", Tensor({out}, 0.0));
}

// depthwise 3x3 -> pointwise -> bias -> silu
Var separable(const BoundParams& p, const std::string& name, Var x) {
  Var y = ad::depthwise_conv2d(x, p[name + ".dw"], 1, 1);
  y = ad::conv2d(y, p[name + ".pw"]);
  y = ad::channel_bias(y, p[name + ".b"]);
  return ad::silu(y);
}

void add_attention(ParamSet& p, const std::string& name, std::size_t f, std::size_t a, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(f));
  p.add(name + ".q", random_tensor(rng, {f, a}, s));
  p.add(name + ".k", random_tensor(rng, {f, a}, s));
  p.add(name + ".v", random_tensor(rng, {f, f}, s));
  p.add(name + ".o", random_tensor(rng, {f, f}, s));
}

}  // namespace

std::size_t attention_window(std::size_t dim, std::size_t max_window) {
  if (dim == 0 || max_window == 0) throw std::invalid_argument("attention_window: zero extent");
  for (std::size_t w = std::min(dim, max_window); w > 1; --w) {
    if (dim % w == 0) return w;
  }
  return 1;
}

Tensor time_embedding(std::span<const std::size_t> t, std::size_t channels, std::size_t rows,
                      std::size_t cols) {
  if (channels == 0 || channels % 2 != 0) {
    throw std::invalid_argument("time_embedding: channel count must be even and positive");
  }
  Tensor out({t.size(), channels, rows, cols}, 0.0);
  const std::size_t half = channels / 2, plane = rows * cols;
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(t[n]) * freq;
      const double sv = std::sin(arg), cv = std::cos(arg);
      double* s_plane = out.data().data() + (n * channels + 2 * i) * plane;
      double* c_plane = s_plane + plane;
      std::fill(s_plane, s_plane + plane, sv);
      std::fill(c_plane, c_plane + plane, cv);
    }
  }
  return out;
}

Var windowed_cross_attention(const BoundParams& params, Var features, Var context,
                             std::size_t max_window) {
  const Shape& shape = features.value().shape();
  if (context.value().shape() != shape) {
    throw std::invalid_argument("cross-attention: feature and context shapes differ: " +
                                shape_to_string(shape) + " vs " +
                                shape_to_string(context.value().shape()));
  }
  const std::size_t wh = attention_window(shape[2], max_window);
  const std::size_t ww = attention_window(shape[3], max_window);
  const Var q_tokens = ad::window_tokens(features, wh, ww);
  const Var c_tokens = ad::window_tokens(context, wh, ww);
  const Var q = ad::matmul(q_tokens, params["q"]);
  const Var k = ad::matmul(c_tokens, params["k"]);
  const Var v = ad::matmul(c_tokens, params["v"]);
  const Var mixed = ad::matmul(ad::cross_attention(q, k, v), params["o"]);
  return ad::window_merge(mixed, shape, wh, ww);
}

void EpsNetConfig::validate() const {
  if (image_channels == 0 || cond_channels == 0 || hidden == 0 || attn_dim == 0 || max_window == 0) {
    throw std::invalid_argument("eps-net: channel counts must be positive");
  }
  if (time_channels == 0 || time_channels % 2 != 0) {
    throw std::invalid_argument("eps-net: time channels must be even and positive");
  }
}

ParamSet init_eps_net(const EpsNetConfig& c, Rng& rng) {
  c.validate();
  ParamSet p;
  const std::size_t in = c.image_channels + c.cond_channels + c.time_channels;
  add_separable(p, "enc1", in, c.hidden, rng);
  add_separable(p, "enc2", c.hidden, c.hidden, rng);
  add_separable(p, "cond", c.cond_channels, c.hidden, rng);
  add_attention(p, "attn", c.hidden, c.attn_dim, rng);
  add_separable(p, "dec1", c.hidden, c.hidden, rng);
  add_separable(p, "dec2", c.hidden, c.hidden, rng);
  p.add("out.pw", random_tensor(rng, {c.image_channels, c.hidden, 1, 1},
                                0.1 / std::sqrt(static_cast<double>(c.hidden))));
  p.add("out.b", Tensor({c.image_channels}, 0.0));
  return p;
}

Var eps_net_forward(const EpsNetConfig& c, const BoundParams& p, Var x_t, Var condition,
                    std::span<const std::size_t> t) {
  const Shape& xs = x_t.value().shape();
  if (xs.size() != 4 || xs[1] != c.image_channels) {
    throw std::invalid_argument("eps-net: x_t must be [N," + std::to_string(c.image_channels) +
                                ",H,W], got " + shape_to_string(xs));
  }
  const Shape& cs = condition.value().shape();
  if (cs.size() != 4 || cs[0] != xs[0] || cs[1] != c.cond_channels || cs[2] != xs[2] || cs[3] != xs[3]) {
    throw std::invalid_argument("eps-net: condition shape " + shape_to_string(cs) +
                                " incompatible with x_t " + shape_to_string(xs));
  }
  if (t.size() != xs[0]) throw std::invalid_argument("eps-net: one timestep per batch item required");
  Tape& tape = *x_t.tape();
  const Var temb = tape.constant(time_embedding(t, c.time_channels, xs[2], xs[3]));
  const Var h1 = separable(p, "enc1", ad::concat_channels({x_t, condition, temb}));
  const Var h2 = separable(p, "enc2", h1);
  const Var ctx = separable(p, "cond", condition);
  const Var attended = ad::add(h2, windowed_cross_attention(p.scoped("attn."), h2, ctx, c.max_window));
  const Var d1 = separable(p, "dec1", attended);
  const Var d2 = separable(p, "dec2", ad::add(d1, h1));
  return ad::channel_bias(ad::conv2d(d2, p["out.pw"]), p["out.b"]);
}

void HfNetConfig::validate() const {
  if (features == 0 || max_window == 0) throw std::invalid_argument("hf-net: sizes must be positive");
}

ParamSet init_hf_net(const HfNetConfig& c, Rng& rng) {
  c.validate();
  ParamSet p;
  const std::size_t f = c.features;
  for (int i = 0; i < 3; ++i) {
    const std::string b = "band" + std::to_string(i);
    add_separable(p, b + ".extract", 1, f, rng);
  }
  add_attention(p, "attn", f, f, rng);
  for (int i = 0; i < 3; ++i) {
    const std::string b = "band" + std::to_string(i);
    p.add(b + ".refine.dw", random_tensor(rng, {f, 3, 3}, 1.0 / 3.0));
    p.add(b + ".refine.b", Tensor({f}, 0.0));
    p.add(b + ".out.pw", Tensor({1, f, 1, 1}, 0.0));
    p.add(b + ".out.b", Tensor({1}, 0.0));
  }
  return p;
}

Var hf_net_forward(const HfNetConfig& c, const BoundParams& p, Var bands) {
  const Shape& s = bands.value().shape();
  if (s.size() != 4 || s[1] % 3 != 0) {
    throw std::invalid_argument("hf-net: expected [N,3C,h,w] subband stack, got " + shape_to_string(s));
  }
  const std::size_t n = s[0], colors = s[1] / 3;
  // Each (item, colour) pair becomes one batch entry with a single channel.
  std::vector<Var> feats;
  for (std::size_t i = 0; i < 3; ++i) {
    const Var band = ad::reshape(ad::slice_channels(bands, i * colors, colors), {n * colors, 1, s[2], s[3]});
    feats.push_back(separable(p, "band" + std::to_string(i) + ".extract", band));
  }
  const BoundParams attn = p.scoped("attn.");
  std::vector<Var> outs;
  for (std::size_t i = 0; i < 3; ++i) {
    Var fused = feats[i];
    for (std::size_t j = 0; j < 3; ++j) {
      if (j == i) continue;
      fused = ad::add(fused, windowed_cross_attention(attn, feats[i], feats[j], c.max_window));
    }
    const std::string b = "band" + std::to_string(i);
    Var r = ad::depthwise_conv2d(fused, p[b + ".refine.dw"], 1, 1);
    r = ad::silu(ad::channel_bias(r, p[b + ".refine.b"]));
    r = ad::channel_bias(ad::conv2d(r, p[b + ".out.pw"]), p[b + ".out.b"]);
    outs.push_back(ad::reshape(r, {n, colors, s[2], s[3]}));
  }
  return ad::add(bands, ad::concat_channels(outs));
}

ParamSet init_perceptual(const PerceptualConfig& c) {
  Rng rng(c.seed);
  ParamSet p;
  const std::size_t w = c.width;
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in) {
    p.add(name, random_tensor(rng, {out, in, 3, 3}, std::sqrt(2.0 / static_cast<double>(9 * in))));
  };
  conv("conv1", w, c.in_channels);
  conv("conv2", w, w);
  conv("conv3", 2 * w, w);
  conv("conv4", 2 * w, 2 * w);
  return p;
}

PerceptualFeatures perceptual_features(const BoundParams& p, Var image) {
  const Shape& s = image.value().shape();
  if (s.size() != 4) throw std::invalid_argument("perceptual: expected [N,C,H,W]");
  PerceptualFeatures out;
  out.f2 = ad::conv2d(ad::relu(ad::conv2d(image, p["conv1"], 1, 1)), p["conv2"], 1, 1);
  Var x = out.f2;
  if (s[2] % 2 == 0 && s[3] % 2 == 0 && s[2] > 1 && s[3] > 1) x = ad::downsample_nearest(x, 2);
  out.f4 = ad::conv2d(ad::relu(ad::conv2d(x, p["conv3"], 1, 1)), p["conv4"], 1, 1);
  return out;
}

}  // namespace lensless

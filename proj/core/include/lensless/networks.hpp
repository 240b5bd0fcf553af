#pragma once

#include <cstdint>
#include <span>

#include "lensless/autodiff.hpp"
#include "lensless/optim.hpp"
#include "lensless/rng.hpp"

namespace lensless {

/// Largest divisor of `dim` not exceeding `max_window`.
std::size_t attention_window(std::size_t dim, std::size_t max_window);

/// Sinusoidal embedding of each t, broadcast to [N, channels, rows, cols].
Tensor time_embedding(std::span<const std::size_t> t, std::size_t channels, std::size_t rows,
                      std::size_t cols);

/// Windowed cross-attention block: queries from `features`, keys and values
/// from `context` (both [N,F,H,W]), output projected back to F channels.
/// Expects params q, k, v ([F,A], [F,A], [F,F]) and o ([F,F]).
Var windowed_cross_attention(const BoundParams& params, Var features, Var context,
                             std::size_t max_window);

/// Conditional noise predictor for the LL band.
///
/// Input is concat(x_t, condition, time embedding); two depthwise-separable
/// encoder blocks, a cross-attention block against condition features, and
/// a mirrored decoder with a skip from the first encoder block.
struct EpsNetConfig {
  std::size_t image_channels = 3;
  std::size_t cond_channels = 3;
  std::size_t time_channels = 8;
  std::size_t hidden = 32;
  std::size_t attn_dim = 16;
  std::size_t max_window = 8;

  void validate() const;
};

ParamSet init_eps_net(const EpsNetConfig& config, Rng& rng);
Var eps_net_forward(const EpsNetConfig& config, const BoundParams& params, Var x_t, Var condition,
                    std::span<const std::size_t> t);

/// High-frequency refinement network.
///
/// Input [N,3C,h,w] holds the LH, HL and HH subbands of C-channel images as
/// consecutive blocks of C channels. Colour channels are processed
/// independently; each subband gets its own depthwise-separable extractor, attends to the
/// other two, and is refined by a depthwise layer and a pointwise layer
/// whose weights start at zero, so the untrained network is the identity.
struct HfNetConfig {
  std::size_t features = 8;
  std::size_t max_window = 8;

  void validate() const;
};

ParamSet init_hf_net(const HfNetConfig& config, Rng& rng);
Var hf_net_forward(const HfNetConfig& config, const BoundParams& params, Var bands);

/// Fixed random 4-layer conv stack used as the feature-distance extractor.
struct PerceptualConfig {
  std::uint64_t seed = 1234;
  std::size_t in_channels = 3;
  std::size_t width = 8;
};

ParamSet init_perceptual(const PerceptualConfig& config);

struct PerceptualFeatures {
  Var f2;
  Var f4;
};

/// conv-relu-conv (f2), downsample by 2, conv-relu-conv (f4). Inputs with an
/// odd or unit spatial extent skip the downsampling.
PerceptualFeatures perceptual_features(const BoundParams& params, Var image);

}  // namespace lensless

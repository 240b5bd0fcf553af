#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

/// One level of orthonormal Haar coefficients. All four bands share the
/// source layout ([h,w] or [C,h,w]) at half resolution.
struct SubbandSet {
  Tensor ll, lh, hl, hh;
  std::size_t level = 1;
  /// Set when the source had an odd extent and was padded by repeating its
  /// last row / column before analysis.
  bool padded_rows = false;
  bool padded_cols = false;
};

/// Haar analysis of [H,W] or [C,H,W]. For every 2x2 block [a,b;c,d]:
/// LL=(a+b+c+d)/2, LH=(a+b-c-d)/2, HL=(a-b+c-d)/2, HH=(a-b-c+d)/2.
SubbandSet dwt2(const Tensor& image);
/// Exact inverse of dwt2, dropping any padding recorded in the set.
Tensor idwt2(const SubbandSet& bands);

/// levels[0] is the finest level; the coarse approximation is levels.back().ll.
struct WaveletPyramid {
  std::vector<SubbandSet> levels;
  const Tensor& coarse() const { return levels.back().ll; }
};

WaveletPyramid dwt2_multi(const Tensor& image, std::size_t levels = 2);
Tensor idwt2_multi(const WaveletPyramid& pyramid);

/// Writes <stem>_{LL,LH,HL,HH}.llt1 plus <stem>.json holding level and pad flags.
void save_subbands(const std::filesystem::path& stem, const SubbandSet& bands);
SubbandSet load_subbands(const std::filesystem::path& stem);

namespace ad {

/// [N,C,H,W] -> [N,4C,H/2,W/2] with channel blocks (LL, LH, HL, HH). H, W even.
Var dwt2(Var input);
/// Inverse of ad::dwt2.
Var idwt2(Var bands);

}  // namespace ad

}  // namespace lensless

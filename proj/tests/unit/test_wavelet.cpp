#include <gtest/gtest.h>

#include <filesystem>

#include "lensless/autodiff.hpp"
#include "lensless/errors.hpp"
#include "lensless/rng.hpp"
#include "lensless/wavelet.hpp"

using namespace lensless;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape) {
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

double energy(const SubbandSet& s) {
  return dot(s.ll, s.ll) + dot(s.lh, s.lh) + dot(s.hl, s.hl) + dot(s.hh, s.hh);
}

// Haar block formulas evaluated one block at a time.
SubbandSet block_oracle(const Tensor& x) {
  const std::size_t H = x.dim(0), W = x.dim(1);
  SubbandSet s;
  s.ll = s.lh = s.hl = s.hh = Tensor({H / 2, W / 2}, 0.0);
  for (std::size_t r = 0; r < H / 2; ++r)
    for (std::size_t c = 0; c < W / 2; ++c) {
      const double a = x[2 * r * W + 2 * c], b = x[2 * r * W + 2 * c + 1];
      const double cc = x[(2 * r + 1) * W + 2 * c], d = x[(2 * r + 1) * W + 2 * c + 1];
      const std::size_t i = r * (W / 2) + c;
      s.ll[i] = (a + b + cc + d) / 2;
      s.lh[i] = (a + b - cc - d) / 2;
      s.hl[i] = (a - b + cc - d) / 2;
      s.hh[i] = (a - b - cc + d) / 2;
    }
  return s;
}

}  // namespace

TEST(Dwt2, ConstantImage) {
  const SubbandSet s = dwt2(Tensor({8, 6}, 0.3));
  for (double v : s.ll.values()) EXPECT_DOUBLE_EQ(v, 0.6);
  EXPECT_EQ(max_abs(s.lh) + max_abs(s.hl) + max_abs(s.hh), 0.0);
  EXPECT_EQ(s.ll.shape(), (Shape{4, 3}));
}

TEST(Dwt2, HorizontalStepInsideEachBlock) {
  Tensor x({6, 6}, 0.0);
  for (std::size_t r = 0; r < 6; r += 2)
    for (std::size_t c = 0; c < 6; ++c) x[r * 6 + c] = 1.0;
  const SubbandSet s = dwt2(x);
  for (double v : s.ll.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : s.lh.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_EQ(max_abs(s.hl) + max_abs(s.hh), 0.0);
}

TEST(Dwt2, MatchesBlockFormulas) {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {10, 14});
  const SubbandSet s = dwt2(x), o = block_oracle(x);
  EXPECT_LT(max_abs_diff(s.ll, o.ll), 1e-15);
  EXPECT_LT(max_abs_diff(s.lh, o.lh), 1e-15);
  EXPECT_LT(max_abs_diff(s.hl, o.hl), 1e-15);
  EXPECT_LT(max_abs_diff(s.hh, o.hh), 1e-15);
}

TEST(Dwt2, RoundTripAndParseval) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Tensor x = random_tensor(rng, {3, 16, 16});
    const SubbandSet s = dwt2(x);
    EXPECT_LT(max_abs_diff(idwt2(s), x), 1e-10);
    EXPECT_NEAR(energy(s) / dot(x, x), 1.0, 1e-12);
  }
}

TEST(Idwt2, ZeroBandsLlOnlyAndReverseRoundTrip) {
  SubbandSet z;
  z.ll = z.lh = z.hl = z.hh = Tensor({4, 4}, 0.0);
  EXPECT_EQ(max_abs(idwt2(z)), 0.0);
  SubbandSet c = dwt2(Tensor({8, 8}, 0.7));
  c.lh = c.hl = c.hh = Tensor({4, 4}, 0.0);
  EXPECT_LT(max_abs_diff(idwt2(c), Tensor({8, 8}, 0.7)), 1e-15);
  Rng rng(3);
  SubbandSet r;
  r.ll = random_tensor(rng, {2, 5, 7});
  r.lh = random_tensor(rng, {2, 5, 7});
  r.hl = random_tensor(rng, {2, 5, 7});
  r.hh = random_tensor(rng, {2, 5, 7});
  const SubbandSet back = dwt2(idwt2(r));
  EXPECT_LT(max_abs_diff(back.ll, r.ll), 1e-10);
  EXPECT_LT(max_abs_diff(back.lh, r.lh), 1e-10);
  EXPECT_LT(max_abs_diff(back.hl, r.hl), 1e-10);
  EXPECT_LT(max_abs_diff(back.hh, r.hh), 1e-10);
}

TEST(Dwt2, LinearInInput) {
  Rng rng(4);
  const Tensor a = random_tensor(rng, {8, 8}), b = random_tensor(rng, {8, 8});
  const SubbandSet s = dwt2(a * 2.0 + b), sa = dwt2(a), sb = dwt2(b);
  EXPECT_LT(max_abs_diff(s.hh, sa.hh * 2.0 + sb.hh), 1e-14);
  EXPECT_LT(max_abs_diff(s.ll, sa.ll * 2.0 + sb.ll), 1e-14);
}

TEST(Dwt2, OddExtentsArePaddedAndCropped) {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {2, 7, 9});
  const SubbandSet s = dwt2(x);
  EXPECT_TRUE(s.padded_rows);
  EXPECT_TRUE(s.padded_cols);
  EXPECT_EQ(s.ll.shape(), (Shape{2, 4, 5}));
  EXPECT_LT(max_abs_diff(idwt2(s), x), 1e-12);
  EXPECT_THROW(dwt2(Tensor()), DataError);
}

TEST(Dwt2Multi, LevelsShapesAndRoundTrip) {
  const WaveletPyramid big = dwt2_multi(Tensor({3, 384, 384}, 0.5));
  EXPECT_EQ(big.coarse().shape(), (Shape{3, 96, 96}));
  Rng rng(6);
  const Tensor x = random_tensor(rng, {64, 64});
  for (std::size_t levels = 1; levels <= 4; ++levels) {
    const WaveletPyramid p = dwt2_multi(x, levels);
    ASSERT_EQ(p.levels.size(), levels);
    EXPECT_EQ(p.levels.back().level, levels);
    EXPECT_LT(max_abs_diff(idwt2_multi(p), x), 1e-10);
    double e = dot(p.coarse(), p.coarse());
    for (const SubbandSet& s : p.levels) e += dot(s.lh, s.lh) + dot(s.hl, s.hl) + dot(s.hh, s.hh);
    EXPECT_NEAR(e / dot(x, x), 1.0, 1e-12);
  }
  const SubbandSet one = dwt2(x);
  EXPECT_EQ(dwt2_multi(x, 1).levels[0].hh, one.hh);
}

TEST(Subbands, SaveLoadRoundTrip) {
  Rng rng(7);
  const SubbandSet s = dwt2_multi(random_tensor(rng, {3, 9, 12}), 2).levels[1];
  const auto dir = std::filesystem::temp_directory_path() / "lensless_wavelet_test";
  std::filesystem::create_directories(dir);
  save_subbands(dir / "band", s);
  const SubbandSet back = load_subbands(dir / "band");
  EXPECT_EQ(back.ll, s.ll);
  EXPECT_EQ(back.hh, s.hh);
  EXPECT_EQ(back.level, 2u);
  EXPECT_EQ(back.padded_rows, s.padded_rows);
  EXPECT_EQ(back.padded_cols, s.padded_cols);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_subbands(dir / "band"), DataError);
}

TEST(TapeDwt2, MatchesTensorTransformAndInverts) {
  Rng rng(8);
  const Tensor x = random_tensor(rng, {2, 3, 8, 6});
  Tape tape;
  const Var v = tape.leaf(x);
  const Var bands = ad::dwt2(v);
  ASSERT_EQ(bands.shape(), (Shape{2, 12, 4, 3}));
  const std::size_t plane = 12;
  for (std::size_t n = 0; n < 2; ++n) {
    const Tensor item({3, 8, 6}, std::vector<double>(x.values().begin() + n * 144, x.values().begin() + (n + 1) * 144));
    const SubbandSet s = dwt2(item);
    const Tensor* ref[] = {&s.ll, &s.lh, &s.hl, &s.hh};
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 3 * plane; ++i) {
        EXPECT_DOUBLE_EQ(bands.value()[(n * 12 + b * 3) * plane + i], (*ref[b])[i]);
      }
  }
  EXPECT_LT(max_abs_diff(ad::idwt2(bands).value(), x), 1e-12);
}

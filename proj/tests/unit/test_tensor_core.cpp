#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "lensless/autodiff.hpp"
#include "lensless/gradcheck_suite.hpp"
#include "lensless/rng.hpp"
#include "lensless/tensor.hpp"

using namespace lensless;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape) {
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = 2.0 * rng.uniform() - 1.0;
  return t;
}

// Direct summation reference for conv2d.
Tensor conv_oracle(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out({N, F, Ho, Wo}, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t b = 0; b < kw; ++b) {
                const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                acc += x[((n * C + c) * H + r) * W + s] * k[((f * C + c) * kh + a) * kw + b];
              }
          out[((n * F + f) * Ho + i) * Wo + j] = acc;
        }
  return out;
}

Tensor run(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value();
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndSizeMismatch) {
  EXPECT_THROW(Tensor({2, 0}), std::invalid_argument);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(sum(t), 9.0);
}

TEST(Tensor, Llt1LayoutAndRoundTrip) {
  Tensor t({2, 3}, std::vector<double>{1, -2, 3.5, 4, 5, 6e-300});
  const auto bytes = encode_llt1(t);
  ASSERT_EQ(bytes.size(), 4u + 4u + 2 * 8u + 6 * 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LLT1");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[16], 3);
  std::stringstream ss;
  write_llt1(ss, t);
  EXPECT_EQ(read_llt1(ss), t);
}

TEST(Tensor, Llt1RejectsBadMagic) {
  std::stringstream ss("XXXX\x01\x00\x00\x00");
  EXPECT_ANY_THROW(read_llt1(ss));
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {1, 1, 4, 4});
  const Tensor y = run([&](Tape& t) { return ad::conv2d(t.constant(x), t.constant(Tensor({1, 1, 1, 1}, 1.0))); });
  EXPECT_EQ(y, x);
}

TEST(Conv2d, HandComputedDiagonal) {
  const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor k({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  const Tensor y = run([&](Tape& t) { return ad::conv2d(t.constant(x), t.constant(k)); });
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 5.0);
}

TEST(Conv2d, MatchesBruteForceOracle) {
  Rng rng(2);
  const Tensor x = random_tensor(rng, {1, 2, 8, 8});
  const Tensor k = random_tensor(rng, {3, 2, 3, 3});
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      const Tensor y = run([&](Tape& t) { return ad::conv2d(t.constant(x), t.constant(k), stride, pad); });
      EXPECT_LT(max_abs_diff(y, conv_oracle(x, k, stride, pad)), 1e-12) << stride << "/" << pad;
    }
}

TEST(Conv2d, IsLinear) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {1, 2, 6, 6}), z = random_tensor(rng, {1, 2, 6, 6});
  const Tensor k = random_tensor(rng, {2, 2, 3, 3});
  auto conv = [&](const Tensor& in) { return run([&](Tape& t) { return ad::conv2d(t.constant(in), t.constant(k), 1, 1); }); };
  const Tensor lhs = conv(x * 0.7 + z * -1.3);
  const Tensor rhs = conv(x) * 0.7 + conv(z) * -1.3;
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Conv2d, ErrorNamesOffendingDimension) {
  Tape t;
  const Var x = t.constant(Tensor({1, 2, 4, 4}, 0.0));
  try {
    ad::conv2d(x, t.constant(Tensor({1, 3, 3, 3}, 0.0)));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
  try {
    ad::conv2d(x, t.constant(Tensor({1, 2, 5, 3}, 0.0)));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos);
  }
}

TEST(DepthwiseConv2d, IdentityKernelsAndSingleChannelReduction) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {1, 3, 5, 5});
  EXPECT_EQ(run([&](Tape& t) { return ad::depthwise_conv2d(t.constant(x), t.constant(Tensor({3, 1, 1}, 1.0))); }), x);
  const Tensor x1 = random_tensor(rng, {1, 1, 5, 5});
  const Tensor k = random_tensor(rng, {1, 3, 3});
  const Tensor dw = run([&](Tape& t) { return ad::depthwise_conv2d(t.constant(x1), t.constant(k), 1, 1); });
  const Tensor full = run([&](Tape& t) { return ad::conv2d(t.constant(x1), t.constant(k.reshaped({1, 1, 3, 3})), 1, 1); });
  EXPECT_LT(max_abs_diff(dw, full), 1e-15);
}

TEST(DepthwiseConv2d, MatchesPerChannelLoopOracle) {
  Rng rng(5);
  const Tensor x = random_tensor(rng, {1, 3, 6, 6});
  const Tensor k = random_tensor(rng, {3, 3, 3});
  const Tensor y = run([&](Tape& t) { return ad::depthwise_conv2d(t.constant(x), t.constant(k), 1, 1); });
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor xc({1, 1, 6, 6}, std::vector<double>(x.values().begin() + c * 36, x.values().begin() + (c + 1) * 36));
    Tensor kc({1, 1, 3, 3}, std::vector<double>(k.values().begin() + c * 9, k.values().begin() + (c + 1) * 9));
    const Tensor ref = conv_oracle(xc, kc, 1, 1);
    for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(y[c * 36 + i], ref[i], 1e-12);
  }
  Tape t;
  EXPECT_THROW(ad::depthwise_conv2d(t.constant(x), t.constant(Tensor({2, 3, 3}, 0.0))), std::invalid_argument);
}

TEST(CrossAttention, SingleKeyAndIdenticalKeys) {
  Rng rng(6);
  const Tensor q = random_tensor(rng, {3, 4});
  const Tensor v1 = random_tensor(rng, {1, 4});
  const Tensor one = run([&](Tape& t) {
    return ad::cross_attention(t.constant(q), t.constant(random_tensor(rng, {1, 4})), t.constant(v1));
  });
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(one[i * 4 + d], v1[d], 1e-15);

  const Tensor krow = random_tensor(rng, {1, 4});
  Tensor k({5, 4}, 0.0);
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t d = 0; d < 4; ++d) k[m * 4 + d] = krow[d];
  const Tensor v = random_tensor(rng, {5, 4});
  const Tensor y = run([&](Tape& t) { return ad::cross_attention(t.constant(q), t.constant(k), t.constant(v)); });
  for (std::size_t d = 0; d < 4; ++d) {
    double mean = 0.0;
    for (std::size_t m = 0; m < 5; ++m) mean += v[m * 4 + d] / 5.0;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i * 4 + d], mean, 1e-12);
  }
}

TEST(CrossAttention, MatchesDenseSoftmaxOracle) {
  Rng rng(7);
  const Tensor q = random_tensor(rng, {3, 5}), k = random_tensor(rng, {4, 5}), v = random_tensor(rng, {4, 5});
  const Tensor y = run([&](Tape& t) { return ad::cross_attention(t.constant(q), t.constant(k), t.constant(v)); });
  for (std::size_t i = 0; i < 3; ++i) {
    double s[4], z = 0.0;
    for (std::size_t m = 0; m < 4; ++m) {
      double d = 0.0;
      for (std::size_t j = 0; j < 5; ++j) d += q[i * 5 + j] * k[m * 5 + j];
      s[m] = std::exp(d / std::sqrt(5.0));
      z += s[m];
    }
    for (std::size_t j = 0; j < 5; ++j) {
      double ref = 0.0;
      for (std::size_t m = 0; m < 4; ++m) ref += s[m] / z * v[m * 5 + j];
      EXPECT_NEAR(y[i * 5 + j], ref, 1e-12);
    }
  }
  const Tensor a = attention_weights(q, k);
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0.0;
    for (std::size_t m = 0; m < 4; ++m) row += a[i * 4 + m];
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
  Tape t;
  EXPECT_THROW(ad::cross_attention(t.constant(q), t.constant(Tensor({4, 3}, 0.0)), t.constant(v)),
               std::invalid_argument);
}

TEST(Backward, SumAndSquare) {
  Rng rng(8);
  const Tensor x = random_tensor(rng, {3, 2});
  {
    Tape t;
    const Var v = t.leaf(x);
    t.backward(ad::sum(v));
    EXPECT_EQ(t.grad(v), Tensor({3, 2}, 1.0));
  }
  {
    Tape t;
    const Var v = t.leaf(x);
    t.backward(ad::sum(ad::mul(v, v)));
    EXPECT_LT(max_abs_diff(t.grad(v), x * 2.0), 1e-15);
  }
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  const Var v = t.leaf(Tensor({2}, 1.0));
  EXPECT_THROW(t.backward(ad::scale(v, 2.0)), std::invalid_argument);
}

TEST(Backward, LeafGradientsHaveLeafShape) {
  Rng rng(9);
  Tape t;
  const Var x = t.leaf(random_tensor(rng, {1, 2, 5, 5}));
  const Var k = t.leaf(random_tensor(rng, {3, 2, 3, 3}));
  const Var unused = t.leaf(random_tensor(rng, {4}));
  t.backward(ad::mean(ad::relu(ad::conv2d(x, k, 1, 1))));
  EXPECT_EQ(t.grad(x).shape(), x.value().shape());
  EXPECT_EQ(t.grad(k).shape(), k.value().shape());
  EXPECT_EQ(t.grad(unused), Tensor({4}, 0.0));
}

TEST(Backward, CompositeConvReluMseMatchesFiniteDifferences) {
  Rng rng(10);
  const Tensor target = random_tensor(rng, {1, 2, 4, 4});
  const auto report = gradcheck(
      [&](Tape& t, std::span<const Var> v) {
        const Var y = ad::relu(ad::conv2d(v[0], v[1], 1, 1));
        return ad::mean(ad::square(ad::sub(y, t.constant(target))));
      },
      {random_tensor(rng, {1, 2, 4, 4}), random_tensor(rng, {2, 2, 3, 3})});
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.coordinates, 32u + 36u);
}

TEST(Backward, ReplayIsBitIdentical) {
  Rng rng(11);
  const Tensor x = random_tensor(rng, {1, 2, 4, 4}), k = random_tensor(rng, {2, 2, 3, 3});
  auto once = [&]() {
    Tape t;
    const Var a = t.leaf(x), b = t.leaf(k);
    const Var loss = ad::sum(ad::silu(ad::conv2d(a, b, 1, 1)));
    t.backward(loss);
    return std::make_pair(loss.value(), t.grad(b));
  };
  EXPECT_EQ(once(), once());
}

TEST(Backward, GradDisabledTapeRecordsValuesOnly) {
  Tape t;
  t.set_grad_enabled(false);
  const Var x = t.leaf(Tensor({2}, 1.0));
  const Var y = ad::sum(ad::square(x));
  EXPECT_EQ(y.value().item(), 2.0);
  EXPECT_FALSE(t.requires_grad(y));
}

TEST(FiniteDiff, SumAndSquare) {
  Rng rng(12);
  const Tensor x = random_tensor(rng, {5});
  const Tensor g = finite_diff_grad([](const Tensor& t) { return sum(t); }, x, 1e-5);
  for (double v : g.values()) EXPECT_NEAR(v, 1.0, 1e-9);
  const Tensor g2 = finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, Tensor({1}, 3.0), 1e-5);
  EXPECT_NEAR(g2[0], 6.0, 1e-8);
  EXPECT_THROW(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0), std::invalid_argument);
}

TEST(FiniteDiff, EveryPrimitiveAndLossPassesGradcheck) {
  const auto results = run_gradcheck_suite();
  EXPECT_GE(results.size(), 30u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " rel err " << r.max_rel_error;
    EXPECT_GT(r.coordinates, 0u) << r.name;
  }
}

TEST(Ops, UpsampleDownsampleConcatSlice) {
  const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor up = run([&](Tape& t) { return ad::upsample_nearest(t.constant(x), 2); });
  EXPECT_EQ(up.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(up[0], 1.0);
  EXPECT_EQ(up[3], 2.0);
  EXPECT_EQ(up[15], 4.0);
  EXPECT_EQ(run([&](Tape& t) { return ad::downsample_nearest(t.constant(up), 2); }), x);
  const Tensor cat = run([&](Tape& t) { return ad::concat_channels({t.constant(x), t.constant(x * 2.0)}); });
  EXPECT_EQ(cat.shape(), (Shape{1, 2, 2, 2}));
  EXPECT_EQ(run([&](Tape& t) { return ad::slice_channels(t.constant(cat), 1, 1); }), x * 2.0);
}

TEST(Ops, WindowTokensRoundTrip) {
  Rng rng(13);
  const Tensor x = random_tensor(rng, {2, 3, 4, 6});
  const Tensor back = run([&](Tape& t) {
    return ad::window_merge(ad::window_tokens(t.constant(x), 2, 3), x.shape(), 2, 3);
  });
  EXPECT_EQ(back, x);
}

TEST(Ops, MatmulHandComputed) {
  const Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor b({2, 1}, std::vector<double>{5, 6});
  const Tensor y = run([&](Tape& t) { return ad::matmul(t.constant(a), t.constant(b)); });
  EXPECT_EQ(y, Tensor({2, 1}, std::vector<double>{17, 39}));
}

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "muvit/ops.hpp"
#include "test_util.hpp"

namespace muvit {
namespace {

using test::random_tensor;
using D = Tensor<double>;

D none;

// ---- conv2d -------------------------------------------------------------

TEST(Conv2d, IdentityOneByOne) {
  D x({1, 1, 1, 1}, 5.0), w({1, 1, 1, 1}, 1.0), b({1}, 0.0);
  EXPECT_EQ(conv2d(x, w, b)[0], 5.0);
}

TEST(Conv2d, OnesThreeByThreePadded) {
  D x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0);
  const auto y = conv2d(x, w, none, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y[4], 9.0);
  for (std::size_t corner : {0, 2, 6, 8}) EXPECT_EQ(y[corner], 4.0);
  EXPECT_EQ(y[1], 6.0);
}

TEST(Conv2d, DepthwiseChannelConstant) {
  D x({1, 2, 3, 3});
  for (int i = 0; i < 9; ++i) {
    x[i] = 1.0;
    x[9 + i] = 2.0;
  }
  D w({2, 1, 3, 3}, 1.0);
  const auto y = conv2d(x, w, none, 1, 1, 2);
  EXPECT_EQ(y[4], 9.0);
  EXPECT_EQ(y[9 + 4], 18.0);
}

TEST(Conv2d, StrideTwoShape) {
  const auto y = conv2d(D({2, 4, 8, 8}), D({6, 4, 2, 2}), none, 2, 0);
  EXPECT_EQ(y.shape(), (Shape{2, 6, 4, 4}));
}

TEST(Conv2d, RejectsGroupMismatch) {
  EXPECT_THROW(conv2d(D({1, 3, 4, 4}), D({4, 1, 3, 3}), none, 1, 1, 2), ConfigError);
}

TEST(Conv2d, RejectsNonIntegralOutput) {
  // (4 + 2 - 3) / 2 is not an integer.
  EXPECT_THROW(conv2d(D({1, 1, 4, 4}), D({1, 1, 3, 3}), none, 2, 1), ConfigError);
}

TEST(Conv2d, RejectsChannelMismatch) {
  EXPECT_THROW(conv2d(D({1, 3, 4, 4}), D({2, 2, 3, 3}), none, 1, 1), ConfigError);
}

TEST(Conv2d, DepthwiseSeparableEqualsComposition) {
  // One depthwise plus two pointwise convolutions computed as a pipeline and
  // as an explicit per-pixel loop.
  const int C = 3, H = 5;
  const auto x = random_tensor({1, C, H, H}, 1);
  const auto wd = random_tensor({C, 1, 3, 3}, 2);
  const auto w1 = random_tensor({C, C, 1, 1}, 3);
  const auto w2 = random_tensor({C, C, 1, 1}, 4);
  const auto y = conv2d(conv2d(conv2d(x, wd, none, 1, 1, C), w1, none), w2, none);

  std::vector<double> dw(C * H * H, 0.0), p1(C * H * H, 0.0), p2(C * H * H, 0.0);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < H; ++j)
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b) {
            if (i + a < 0 || i + a >= H || j + b < 0 || j + b >= H) continue;
            dw[(c * H + i) * H + j] += x[(c * H + i + a) * H + j + b] * wd[c * 9 + (a + 1) * 3 + b + 1];
          }
  for (int o = 0; o < C; ++o)
    for (int c = 0; c < C; ++c)
      for (int k = 0; k < H * H; ++k) p1[o * H * H + k] += w1[o * C + c] * dw[c * H * H + k];
  for (int o = 0; o < C; ++o)
    for (int c = 0; c < C; ++c)
      for (int k = 0; k < H * H; ++k) p2[o * H * H + k] += w2[o * C + c] * p1[c * H * H + k];
  for (std::size_t i = 0; i < p2.size(); ++i) EXPECT_NEAR(y[i], p2[i], 1e-12);
}

// ---- conv_transpose2d ---------------------------------------------------

TEST(ConvTranspose2d, ScatterOfOneElement) {
  const auto y = conv_transpose2d(D({1, 1, 1, 1}, 1.0), D({1, 1, 2, 2}, 1.0), none, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 1.0);
}

TEST(ConvTranspose2d, ZeroWeights) {
  const auto y = conv_transpose2d(random_tensor({2, 3, 3, 3}, 5), D({3, 4, 2, 2}), none, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 6, 6}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvTranspose2d, NonOverlappingScatter) {
  const auto y = conv_transpose2d(D({1, 1, 2, 2}, 1.0), D({1, 1, 2, 2}, 1.0), none, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 1.0);
}

TEST(ConvTranspose2d, RejectsChannelMismatch) {
  EXPECT_THROW(conv_transpose2d(D({1, 2, 2, 2}), D({3, 1, 2, 2}), none, 2), ConfigError);
}

TEST(ConvTranspose2d, IsAdjointOfStridedConv) {
  // <conv(x), y> == <x, convT(y)> for the same weights.
  const auto x = random_tensor({1, 2, 6, 6}, 6);
  const auto y = random_tensor({1, 3, 3, 3}, 7);
  const auto w = random_tensor({3, 2, 2, 2}, 8);
  const auto cx = conv2d(x, w, none, 2, 0);
  const auto ty = conv_transpose2d(y, w, none, 2);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

// ---- pooling and upsampling ---------------------------------------------

TEST(Pool2d, MaxAndAverage) {
  D x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(pool2d(x, PoolKind::max, 2, 2)[0], 4.0);
  EXPECT_EQ(pool2d(x, PoolKind::avg, 2, 2)[0], 2.5);
}

TEST(Pool2d, MaxBackwardRoutesToArgmax) {
  D x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  x.set_requires_grad(true);
  test::run_backward<double>([&] { return sum(pool2d(x, PoolKind::max, 2, 2)); });
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 0, 1}));
}

TEST(Pool2d, TiesGoToFirstMaximum) {
  D x({1, 1, 2, 2}, 3.0);
  x.set_requires_grad(true);
  test::run_backward<double>([&] { return sum(pool2d(x, PoolKind::max, 2, 2)); });
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Pool2d, RejectsIndivisible) { EXPECT_THROW(pool2d(D({1, 1, 5, 5}), PoolKind::max, 2, 2), ConfigError); }

TEST(BilinearUpsample, ConstantStaysConstant) {
  const auto y = bilinear_upsample(D({1, 2, 3, 3}, 0.7), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(BilinearUpsample, PreservesCorners) {
  const auto y = bilinear_upsample(D({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[3], 2.0);
  EXPECT_EQ(y[12], 3.0);
  EXPECT_EQ(y[15], 4.0);
  // Align-corners: row 0 samples 1 + (2-1)·j/3.
  EXPECT_NEAR(y[1], 1.0 + 1.0 / 3.0, 1e-15);
}

TEST(BilinearUpsample, SinglePixel) {
  const auto y = bilinear_upsample(D({1, 1, 1, 1}, 2.5), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 2.5);
}

TEST(BilinearUpsample, RejectsScaleOne) { EXPECT_THROW(bilinear_upsample(D({1, 1, 2, 2}), 1), ConfigError); }

// ---- normalization ------------------------------------------------------

TEST(BatchNorm2d, ConstantChannelGivesZero) {
  D x({2, 2, 2, 2});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = (i / 4) % 2 == 0 ? 3.0 : -1.0;
  D g({2}, 1.0), b({2}), rm({2}), rv({2}, 1.0);
  const auto y = batchnorm2d(x, g, b, rm, rv, true);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm2d, ZeroGammaGivesBeta) {
  D g({3}), b({3}, 7.0), rm({3}), rv({3}, 1.0);
  const auto y = batchnorm2d(random_tensor({2, 3, 2, 2}, 9), g, b, rm, rv, true);
  for (double v : y.data()) EXPECT_EQ(v, 7.0);
}

TEST(BatchNorm2d, TwoValuesNormalizeToPlusMinusOne) {
  D x({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  D g({1}, 1.0), b({1}), rm({1}), rv({1}, 1.0);
  const auto y = batchnorm2d(x, g, b, rm, rv, true, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
  // Running stats: mean 0.1·2, unbiased variance 2 blended with 0.9·1.
  EXPECT_DOUBLE_EQ(rm[0], 0.2);
  EXPECT_DOUBLE_EQ(rv[0], 0.9 + 0.1 * 2.0);
}

TEST(BatchNorm2d, EvalUsesRunningStats) {
  D x({1, 1, 1, 2}, std::vector<double>{5.0, 7.0});
  D g({1}, 2.0), b({1}, 1.0), rm({1}, 5.0), rv({1}, 4.0);
  const auto y = batchnorm2d(x, g, b, rm, rv, false, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 3.0);
  EXPECT_EQ(rm[0], 5.0);
}

TEST(BatchNorm2d, RejectsChannelMismatch) {
  D g({2}, 1.0), b({2}), rm({2}), rv({2}, 1.0);
  EXPECT_THROW(batchnorm2d(D({1, 3, 2, 2}), g, b, rm, rv, true), ConfigError);
}

TEST(LayerNorm, ConstantTokenGivesZero) {
  D g({4}, 1.0), b({4});
  const auto y = layernorm(D({2, 4}, 3.0), g, b);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PlusMinusOne) {
  D x({1, 2}, std::vector<double>{1.0, -1.0});
  D g({2}, 1.0), b({2});
  const auto y = layernorm(x, g, b, 0.0);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], -1.0);
  D g2({2}, 2.0), b2({2}, 1.0);
  const auto z = layernorm(x, g2, b2, 0.0);
  EXPECT_DOUBLE_EQ(z[0], 3.0);
  EXPECT_DOUBLE_EQ(z[1], -1.0);
}

TEST(LayerNorm, RejectsDimMismatch) {
  D g({3}, 1.0), b({3});
  EXPECT_THROW(layernorm(D({2, 4}), g, b), ConfigError);
}

// ---- activations --------------------------------------------------------

TEST(Activation, ReferenceValues) {
  EXPECT_EQ(gelu(D::scalar(0.0)).item(), 0.0);
  EXPECT_EQ(relu(D::scalar(-2.0)).item(), 0.0);
  EXPECT_EQ(sigmoid(D::scalar(0.0)).item(), 0.5);
  const auto s = softmax(D({2}, 0.0));
  EXPECT_EQ(s[0], 0.5);
  EXPECT_EQ(s[1], 0.5);
  // Φ(1) = 0.841344746...
  EXPECT_NEAR(gelu(D::scalar(1.0)).item(), 0.841345, 1e-5);
}

TEST(Activation, SoftmaxRowsAreDistributions) {
  const auto s = softmax(random_tensor({7, 13}, 10, -20.0, 20.0));
  for (int r = 0; r < 7; ++r) {
    double total = 0.0;
    for (int j = 0; j < 13; ++j) {
      EXPECT_GE(s[r * 13 + j], 0.0);
      total += s[r * 13 + j];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Activation, SoftmaxIsShiftStable) {
  const auto s = softmax(D({3}, std::vector<double>{1000.0, 1000.0, 1000.0}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Activation, NanPropagates) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(std::isnan(relu(D::scalar(nan)).item()));
  D x({1, 1, 2, 2}, std::vector<double>{1, nan, 3, 2});
  EXPECT_TRUE(std::isnan(pool2d(x, PoolKind::max, 2, 2)[0]));
  D y({1, 1, 2, 2}, std::vector<double>{nan, 5, 3, 2});
  EXPECT_TRUE(std::isnan(pool2d(y, PoolKind::max, 2, 2)[0]));
}

// ---- linear and attention -----------------------------------------------

TEST(Linear, Identity) {
  const auto x = random_tensor({3, 4}, 11);
  D w({4, 4});
  for (int i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  EXPECT_EQ(test::max_abs_diff(linear(x, w, D({4})), x), 0.0);
}

TEST(Linear, ZeroWeightsGiveBias) {
  const auto y = linear(random_tensor({2, 3, 5}, 12), D({2, 5}), D({2}, std::vector<double>{1, 2}));
  for (std::size_t i = 0; i < y.numel(); i += 2) {
    EXPECT_EQ(y[i], 1.0);
    EXPECT_EQ(y[i + 1], 2.0);
  }
}

TEST(Linear, HandProduct) {
  const auto y = linear(D({1, 2}, std::vector<double>{1, 2}), D({2, 2}, std::vector<double>{1, 1, 0, 1}), D({2}));
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], 2.0);
}

AttentionWeights<double> identity_attention(int d) {
  D eye({d, d});
  for (int i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  return {eye, D({d}), eye.clone(), D({d}), eye.clone(), D({d}), eye.clone(), D({d})};
}

TEST(Mhsa, SingleTokenIsIdentity) {
  const auto x = random_tensor({2, 1, 8}, 13);
  EXPECT_LT(test::max_abs_diff(mhsa(x, 2, identity_attention(8)), x), 1e-15);
}

TEST(Mhsa, IdenticalTokensAverageToThemselves) {
  auto x = random_tensor({1, 2, 4}, 14);
  for (int j = 0; j < 4; ++j) x[4 + j] = x[j];
  const auto y = mhsa(x, 2, identity_attention(4));
  EXPECT_LT(test::max_abs_diff(y, x), 1e-15);
}

TEST(Mhsa, ZeroOutputProjection) {
  auto w = identity_attention(8);
  w.wo = D({8, 8});
  const auto y = mhsa(random_tensor({1, 5, 8}, 15), 4, w);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mhsa, RejectsIndivisibleHeads) {
  EXPECT_THROW(mhsa(random_tensor({1, 2, 6}, 16), 4, identity_attention(6)), ConfigError);
}

TEST(Mhsa, MatchesExplicitSoftmaxAttention) {
  const int T = 3, d = 4, h = 2, dh = 2;
  const auto x = random_tensor({1, T, d}, 17);
  AttentionWeights<double> w{random_tensor({d, d}, 18), random_tensor({d}, 19), random_tensor({d, d}, 20),
                             random_tensor({d}, 21),    random_tensor({d, d}, 22), random_tensor({d}, 23),
                             random_tensor({d, d}, 24), random_tensor({d}, 25)};
  const auto y = mhsa(x, h, w);
  auto proj = [&](const D& W, const D& b, int t, int o) {
    double s = b[o];
    for (int i = 0; i < d; ++i) s += W[o * d + i] * x[t * d + i];
    return s;
  };
  std::vector<double> merged(T * d, 0.0);
  for (int head = 0; head < h; ++head) {
    for (int t = 0; t < T; ++t) {
      std::vector<double> logits(T);
      for (int u = 0; u < T; ++u) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += proj(w.wq, w.bq, t, head * dh + c) * proj(w.wk, w.bk, u, head * dh + c);
        logits[u] = s / std::sqrt(double(dh));
      }
      double mx = *std::max_element(logits.begin(), logits.end()), z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (int c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (int u = 0; u < T; ++u) acc += logits[u] / z * proj(w.wv, w.bv, u, head * dh + c);
        merged[t * d + head * dh + c] = acc;
      }
    }
  }
  for (int t = 0; t < T; ++t) {
    for (int o = 0; o < d; ++o) {
      double s = w.bo[o];
      for (int i = 0; i < d; ++i) s += w.wo[o * d + i] * merged[t * d + i];
      EXPECT_NEAR(y[t * d + o], s, 1e-13);
    }
  }
}

// ---- structural ---------------------------------------------------------

TEST(Structural, AddBroadcastsLeadingOne) {
  const auto a = random_tensor({3, 2, 2}, 26), b = random_tensor({1, 2, 2}, 27);
  const auto y = add(a, b);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], a[i] + b[i % 4]);
  EXPECT_THROW(add(a, random_tensor({2, 2, 2}, 28)), ConfigError);
}

TEST(Structural, TokensRoundTrip) {
  const auto x = random_tensor({2, 3, 4, 5}, 29);
  const auto t = to_tokens(x);
  ASSERT_EQ(t.shape(), (Shape{2, 20, 3}));
  EXPECT_EQ(t[(1 * 20 + 7) * 3 + 2], x[((1 * 3 + 2) * 4 + 1) * 5 + 2]);
  EXPECT_TRUE(test::bitwise_equal(from_tokens(t, 4, 5), x));
}

TEST(Structural, HeadsRoundTrip) {
  const auto x = random_tensor({2, 3, 8}, 30);
  const auto s = split_heads(x, 4);
  ASSERT_EQ(s.shape(), (Shape{8, 3, 2}));
  EXPECT_TRUE(test::bitwise_equal(merge_heads(s, 4), x));
}

TEST(Structural, ConcatChannels) {
  const auto a = random_tensor({2, 2, 2, 2}, 31), b = random_tensor({2, 1, 2, 2}, 32);
  const auto y = concat_channels(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 2, 2}));
  EXPECT_EQ(y[12 + 8], b[4]);
  EXPECT_EQ(y[12], a[8]);
  EXPECT_THROW(concat_channels(a, random_tensor({2, 1, 3, 3}, 33)), ConfigError);
}

// ---- backward -----------------------------------------------------------

TEST(Backward, SumOfSquares) {
  auto x = random_tensor({5}, 34);
  x.set_requires_grad(true);
  test::run_backward<double>([&] { return sum(mul(x, x)); });
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, ReluOfNegatives) {
  auto x = random_tensor({6}, 35, -3.0, -0.1);
  x.set_requires_grad(true);
  test::run_backward<double>([&] { return sum(relu(x)); });
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ThroughIdentityConv) {
  auto x = random_tensor({1, 1, 3, 3}, 36);
  x.set_requires_grad(true);
  const auto up = random_tensor({1, 1, 3, 3}, 37);
  D w({1, 1, 1, 1}, 1.0);
  test::run_backward<double>([&] { return sum(mul(conv2d(x, w, none), up)); });
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(x.grad()[i], up[i]);
}

TEST(Backward, AccumulatesAcrossCalls) {
  auto x = random_tensor({3}, 38);
  x.set_requires_grad(true);
  test::run_backward<double>([&] { return sum(scale(x, 2.0)); });
  test::run_backward<double>([&] { return sum(scale(x, 2.0)); });
  for (double g : x.grad()) EXPECT_EQ(g, 4.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad() && x.grad()[0] != 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  auto x = random_tensor({3}, 39);
  x.set_requires_grad(true);
  Graph<double> graph;
  GraphScope<double> scope(graph);
  const auto y = scale(x, 2.0);
  EXPECT_THROW(graph.backward(y), UsageError);
}

TEST(Backward, NothingRecordedWithoutScope) {
  auto x = random_tensor({3}, 40);
  x.set_requires_grad(true);
  Graph<double> graph;
  {
    GraphScope<double> scope(graph);
    NoGradScope<double> off;
    (void)sum(x);
  }
  EXPECT_EQ(graph.size(), 0u);
}

TEST(Determinism, RepeatedForwardIsBitwiseEqual) {
  const auto x = random_tensor({2, 4, 8, 8}, 41);
  const auto w = random_tensor({4, 4, 3, 3}, 42);
  EXPECT_TRUE(test::bitwise_equal(conv2d(x, w, none, 1, 1), conv2d(x, w, none, 1, 1)));
}

TEST(Float32, ConvMatchesDouble) {
  const auto xd = random_tensor({1, 3, 6, 6}, 43);
  const auto wd = random_tensor({4, 3, 3, 3}, 44);
  Tensor<float> xf(xd.shape()), wf(wd.shape());
  for (std::size_t i = 0; i < xd.numel(); ++i) xf[i] = static_cast<float>(xd[i]);
  for (std::size_t i = 0; i < wd.numel(); ++i) wf[i] = static_cast<float>(wd[i]);
  const auto yd = conv2d(xd, wd, none, 1, 1);
  const auto yf = conv2d(xf, wf, Tensor<float>(), 1, 1);
  for (std::size_t i = 0; i < yd.numel(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-5);
}

}  // namespace
}  // namespace muvit

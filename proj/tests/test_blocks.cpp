#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "muvit/accounting.hpp"
#include "test_util.hpp"

namespace muvit {
namespace {

using test::contains;
using test::ends_with;
using test::random_tensor;
using test::zero_where;
using D = Tensor<double>;

bool is_conv_state(const std::string& n) {
  return contains(n, ".dw.") || contains(n, ".pw1.") || contains(n, ".pw2.") || contains(n, ".pw.");
}

// ---- ConvUtr ------------------------------------------------------------

TEST(ConvUtrBlock, ZeroConvsAreIdentityInTrainMode) {
  nn::Rng rng(1);
  nn::ConvUtrBlock<double> block(8, 7, rng);
  zero_where(block, is_conv_state);
  const auto x = random_tensor({2, 8, 6, 6}, 2);
  EXPECT_LE(test::max_abs_diff(block(x, true), x), 1e-12);
}

TEST(ConvUtrBlock, ShapePreserved) {
  nn::Rng rng(3);
  nn::ConvUtrBlock<double> block(16, 3, rng);
  EXPECT_EQ(block(D({2, 16, 32, 32}), true).shape(), (Shape{2, 16, 32, 32}));
}

TEST(ConvUtrBlock, ShapePreservedOverRandomShapes) {
  std::mt19937 pick(4);
  for (int trial = 0; trial < 6; ++trial) {
    const int d = 1 + pick() % 6, k = 1 + 2 * (pick() % 4), h = 1 + pick() % 7, w = 1 + pick() % 7;
    nn::Rng rng(trial);
    nn::ConvUtrBlock<double> block(d, k, rng);
    const Shape s{2, d, h, w};
    EXPECT_EQ(block(random_tensor(s, trial), true).shape(), s);
  }
}

TEST(ConvUtrBlock, RejectsEvenKernelAndChannelMismatch) {
  nn::Rng rng(5);
  EXPECT_THROW(nn::ConvUtrBlock<double>(8, 4, rng), ConfigError);
  nn::ConvUtrBlock<double> block(8, 3, rng);
  EXPECT_THROW(block(D({1, 4, 4, 4}), true), ConfigError);
}

TEST(ConvUtrBlock, EvalModeLeavesRunningStatsAlone) {
  nn::Rng rng(6);
  nn::ConvUtrBlock<double> block(4, 3, rng);
  const auto before = block.bn1.running_mean.clone();
  block(random_tensor({2, 4, 5, 5}, 7), false);
  EXPECT_TRUE(test::bitwise_equal(before, block.bn1.running_mean));
  block(random_tensor({2, 4, 5, 5}, 7), true);
  EXPECT_FALSE(test::bitwise_equal(before, block.bn1.running_mean));
}

// ---- LKLGL --------------------------------------------------------------

bool is_lklgl_branch_output(const std::string& n) {
  return contains(n, ".dw.") || contains(n, ".pw.") || contains(n, ".fc2.") || contains(n, ".proj.") ||
         contains(n, ".up.");
}

TEST(LklglBlock, ZeroBranchOutputsAreIdentity) {
  for (bool literal : {false, true}) {
    nn::Rng rng(8);
    nn::LklglBlock<double> block(64, {9, 2, 4, 2, literal}, rng);
    zero_where(block, [](const std::string& n) { return is_lklgl_branch_output("." + n); });
    const auto x = random_tensor({1, 64, 8, 8}, 9);
    EXPECT_LE(test::max_abs_diff(block(x), x), 1e-12) << "literal=" << literal;
  }
}

TEST(LklglBlock, Stage4Shape) {
  nn::Rng rng(10);
  nn::LklglBlock<double> block(64, {}, rng);
  EXPECT_EQ(block(random_tensor({1, 64, 16, 16}, 11)).shape(), (Shape{1, 64, 16, 16}));
}

TEST(LklglBlock, AttentionSeesPooledTokens) {
  nn::Rng rng(12);
  nn::LklglBlock<double> pooled(64, {}, rng);
  EXPECT_EQ(pooled.attention_tokens(16, 16), 64);
  nn::LklglOptions literal;
  literal.literal_order = true;
  nn::LklglBlock<double> full(64, literal, rng);
  EXPECT_EQ(full.attention_tokens(16, 16), 256);
}

TEST(LklglBlock, MeasuredAttentionMacsMatchPooledTokenCount) {
  // QKᵀ plus AV over T = 64 tokens at d = 64: 2·T²·d.
  nn::Rng rng(13);
  nn::LklglBlock<double> block(64, {}, rng);
  MacCounters counters;
  {
    MacCountScope scope(counters);
    block(random_tensor({1, 64, 16, 16}, 14));
  }
  EXPECT_EQ(counters.attention_scores, 64 * 64 * 64);
  EXPECT_EQ(counters.attention_values, 64 * 64 * 64);
}

TEST(LklglBlock, RejectsIndivisibleGrid) {
  nn::Rng rng(15);
  nn::LklglBlock<double> block(32, {}, rng);
  EXPECT_THROW(block(D({1, 32, 5, 5})), ConfigError);
}

// ---- ViT ----------------------------------------------------------------

TEST(VitBlock, ZeroProjectionAndFfnOutputIsIdentity) {
  nn::Rng rng(16);
  nn::VitBlock<double> block(32, 1, 4, rng);
  zero_where(block, [](const std::string& n) { return contains("." + n, ".proj.") || contains("." + n, ".fc2."); });
  const auto x = random_tensor({2, 5, 32}, 17);
  EXPECT_LE(test::max_abs_diff(block(x), x), 1e-12);
}

TEST(VitBlock, BaseBottleneckShape) {
  nn::Rng rng(18);
  nn::VitBlock<double> block(128, 4, 4, rng);
  EXPECT_EQ(block(random_tensor({1, 64, 128}, 19)).shape(), (Shape{1, 64, 128}));
}

TEST(VitBlock, PermutationEquivariant) {
  nn::Rng rng(20);
  nn::VitBlock<double> block(32, 2, 4, rng);
  const int T = 6, d = 32;
  const auto x = random_tensor({1, T, d}, 21);
  std::vector<int> perm(T);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937(22));
  D xp({1, T, d});
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c) xp[perm[t] * d + c] = x[t * d + c];
  const auto y = block(x), yp = block(xp);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c) EXPECT_NEAR(yp[perm[t] * d + c], y[t * d + c], 1e-12);
}

TEST(VitBlock, RejectsDimMismatch) {
  nn::Rng rng(23);
  nn::VitBlock<double> block(32, 1, 4, rng);
  EXPECT_THROW(block(D({1, 4, 16})), ConfigError);
  EXPECT_THROW(nn::VitBlock<double>(30, 4, 4, rng), ConfigError);
}

// ---- skip adapter and decoder -------------------------------------------

TEST(SkipAdapter, HalvesResolution) {
  nn::Rng rng(24);
  nn::SkipAdapter<double> skip(16, 16, true, rng);
  EXPECT_EQ(skip(random_tensor({1, 16, 128, 128}, 25), true).shape(), (Shape{1, 16, 64, 64}));
}

TEST(SkipAdapter, HorizontalKeepsResolution) {
  nn::Rng rng(26);
  nn::SkipAdapter<double> skip(16, 16, false, rng);
  EXPECT_EQ(skip(random_tensor({1, 16, 128, 128}, 27), true).shape(), (Shape{1, 16, 128, 128}));
}

TEST(SkipAdapter, ZeroConvsGiveZeroSkip) {
  nn::Rng rng(28);
  nn::SkipAdapter<double> skip(4, 6, true, rng);
  zero_where(skip, [](const std::string& n) { return contains("." + n, ".conv"); });
  for (bool training : {true, false}) {
    const auto y = skip(random_tensor({2, 4, 8, 8}, 29), training);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(SkipAdapter, RejectsOddInput) {
  nn::Rng rng(30);
  nn::SkipAdapter<double> skip(4, 4, true, rng);
  EXPECT_THROW(skip(D({1, 4, 5, 5}), true), ConfigError);
}

TEST(DecoderBlock, UpsamplesWithoutSkip) {
  nn::Rng rng(31);
  nn::DecoderBlock<double> dec(128, 0, 64, rng);
  EXPECT_EQ(dec(random_tensor({1, 128, 8, 8}, 32), nullptr, true).shape(), (Shape{1, 64, 16, 16}));
}

TEST(DecoderBlock, ConcatenatesSkipChannels) {
  nn::Rng rng(33);
  nn::DecoderBlock<double> dec(128, 32, 64, rng);
  EXPECT_EQ(dec.conv.weight.shape(), (Shape{64, 160, 3, 3}));
  const auto skip = random_tensor({1, 32, 16, 16}, 34);
  EXPECT_EQ(dec(random_tensor({1, 128, 8, 8}, 35), &skip, true).shape(), (Shape{1, 64, 16, 16}));
}

TEST(DecoderBlock, RejectsSkipSizeMismatch) {
  nn::Rng rng(36);
  nn::DecoderBlock<double> dec(8, 4, 8, rng);
  const auto skip = random_tensor({1, 4, 8, 8}, 37);
  EXPECT_THROW(dec(random_tensor({1, 8, 8, 8}, 38), &skip, true), ConfigError);
}

TEST(DecoderBlock, FiveBlocksRestoreFullResolution) {
  nn::Rng rng(39);
  D h = random_tensor({1, 8, 8, 8}, 40);
  for (int j = 0; j < 5; ++j) {
    nn::DecoderBlock<double> dec(8, 0, 8, rng);
    h = dec(h, nullptr, false);
  }
  EXPECT_EQ(h.shape(), (Shape{1, 8, 256, 256}));
}

// ---- names --------------------------------------------------------------

TEST(BlockState, NamesAreUnique) {
  nn::Rng rng(41);
  nn::LklglBlock<double> block(32, {}, rng);
  std::set<std::string> seen;
  int count = 0;
  block.visit("b", [&](const std::string& n, D&, bool) {
    ++count;
    EXPECT_TRUE(seen.insert(n).second) << n;
    EXPECT_TRUE(ends_with(n, ".weight") || ends_with(n, ".bias")) << n;
  });
  EXPECT_EQ(count, 30);  // 4 norms, dw, pw, 2 FFNs, 4 projections, up
}

}  // namespace
}  // namespace muvit

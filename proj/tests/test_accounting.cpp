#include <gtest/gtest.h>

#include <map>

#include "muvit/accounting.hpp"
#include "test_util.hpp"

namespace muvit {
namespace {

using test::ends_with;

TEST(ClosedForms, ReferenceCounts) {
  EXPECT_EQ(conv_macs(64, 64, 3, 16, 3), 1'769'472);
  EXPECT_EQ(convutr_macs(64, 64, 16, 7), 5'308'416);
  EXPECT_EQ(attention_quadratic_macs(64, 128), 2 * 64 * 64 * 128);
  EXPECT_EQ(attention_macs(64, 128), 2 * 64 * 64 * 128 + 4 * 64 * 128 * 128);
}

TEST(ClosedForms, LayerParameterCounts) {
  nn::Rng rng(0);
  auto count = [](auto& layer) {
    std::int64_t n = 0;
    layer.visit("x", [&](const std::string&, Tensor<double>& t, bool trainable) {
      if (trainable) n += static_cast<std::int64_t>(t.numel());
    });
    return n;
  };
  nn::Linear<double> lin(16, 32, rng);
  nn::Conv2d<double> conv(16, 32, 3, 1, 1, 1, rng);
  nn::Conv2d<double> dw(32, 32, 7, 1, 3, 32, rng);
  EXPECT_EQ(count(lin), 544);
  EXPECT_EQ(count(conv), 4640);
  EXPECT_EQ(dw.weight.numel(), 1568u);
}

TEST(ClosedForms, ConvUtrToConvRatioOnGrid) {
  for (std::int64_t d = 1; d <= 256; d *= 2) {
    for (std::int64_t k : {1, 3, 5, 7, 9, 11}) {
      const auto utr = convutr_macs(16, 16, d, k), dense = conv_macs(16, 16, d, d, k);
      // utr·(d·k²) == dense·(k² + 2d) is the ratio statement without rounding.
      EXPECT_EQ(utr * (d * k * k), dense * (k * k + 2 * d)) << d << " " << k;
      if (k >= 3 && d >= 2) EXPECT_LT(utr, dense) << d << " " << k;
      EXPECT_EQ(utr < dense, k * k + 2 * d < d * k * k);
    }
  }
}

TEST(ClosedForms, KernelSwapChangesConvUtrCost) {
  const std::int64_t d = 32;
  const auto k3 = convutr_macs(32, 32, d, 3), k7 = convutr_macs(32, 32, d, 7);
  EXPECT_EQ(k3 * (49 + 2 * d), k7 * (9 + 2 * d));
}

TEST(ClosedForms, AttentionCostRatio) {
  EXPECT_EQ(attention_cost_ratio(4096, 2), 1.0 / 16.0);
  EXPECT_EQ(attention_cost_ratio(4096, 1), 1.0);
  EXPECT_EQ(attention_cost_ratio(256, 4), 1.0 / 256.0);
  EXPECT_THROW(attention_cost_ratio(250, 4), ConfigError);
}

MacCounters lklgl_counters(int dim, int side, int p) {
  nn::Rng rng(1);
  nn::LklglOptions o;
  o.pool_ratio = p;
  nn::LklglBlock<double> block(dim, o, rng);
  MacCounters c;
  MacCountScope scope(c);
  block(Tensor<double>({1, dim, side, side}));
  return c;
}

TEST(MeasuredAttention, PoolingDividesQuadraticTermsByPToTheFourth) {
  // Base stage 4 at 256 input: 64 channels on a 16 x 16 grid.
  const auto p1 = lklgl_counters(64, 16, 1), p2 = lklgl_counters(64, 16, 2), p4 = lklgl_counters(64, 16, 4);
  const auto q = [](const MacCounters& c) { return c.attention_scores + c.attention_values; };
  EXPECT_EQ(q(p1), attention_quadratic_macs(256, 64));
  EXPECT_EQ(q(p2) * 16, q(p1));
  EXPECT_EQ(p4.attention_scores * 256, p1.attention_scores);
  EXPECT_EQ(static_cast<double>(q(p2)) / static_cast<double>(q(p1)), attention_cost_ratio(256, 2));
}

std::map<std::string, CostRow> rows_by_name(const CostReport& r) {
  std::map<std::string, CostRow> m;
  for (const auto& row : r.rows) m[row.layer] = row;
  return m;
}

TEST(CountFlops, DenseConvRowsMatchClosedForm) {
  const auto report = count_flops(ModelConfig::make(Variant::base));
  int dense = 0;
  for (const auto& r : report.rows) {
    if (r.kind != CostKind::conv || ends_with(r.layer, ".dw")) continue;
    EXPECT_EQ(r.macs, conv_macs(r.h, r.w, r.d_in, r.d_out, r.k)) << r.layer;
    ++dense;
  }
  EXPECT_GT(dense, 20);
  const auto rows = rows_by_name(report);
  EXPECT_EQ(rows.at("encoder.stage1.proj").macs, conv_macs(256, 256, 3, 16, 3));
}

TEST(CountFlops, ConvUtrBlocksMatchClosedForm) {
  const auto cfg = ModelConfig::make(Variant::base);
  const auto rows = rows_by_name(count_flops(cfg));
  const std::int64_t side[3] = {256, 128, 64};
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < cfg.depths[s]; ++b) {
      const auto p = "encoder.stage" + std::to_string(s + 1) + ".blocks." + std::to_string(b);
      const auto sum = rows.at(p + ".dw").macs + rows.at(p + ".pw1").macs + rows.at(p + ".pw2").macs;
      EXPECT_EQ(sum, convutr_macs(side[s], side[s], cfg.channels[s], cfg.kernels[s])) << p;
    }
  }
}

TEST(CountFlops, LklglAttentionUsesPooledTokens) {
  const auto rows = rows_by_name(count_flops(ModelConfig::make(Variant::base)));
  const auto& scores = rows.at("encoder.stage4.blocks.0.attn.scores");
  EXPECT_EQ(scores.tokens, 64);
  EXPECT_EQ(scores.macs, 64 * 64 * 64);
}

TEST(CountFlops, BaseAt256IsInBand) {
  const auto g = count_flops(ModelConfig::make(Variant::base)).gflops();
  EXPECT_GE(g, 1.9);
  EXPECT_LE(g, 3.1);
}

TEST(CountFlops, AdditiveAndLinearInBatch) {
  const auto cfg = ModelConfig::make(Variant::base, 64);
  const auto one = count_flops(cfg, 1), three = count_flops(cfg, 3);
  std::int64_t sum = 0;
  for (const auto& r : one.rows) sum += r.macs;
  EXPECT_EQ(sum, one.total_macs);
  EXPECT_EQ(three.total_macs, 3 * one.total_macs);
  EXPECT_EQ(three.total_params, one.total_params);
}

TEST(CountFlops, ConvRowsScaleWithArea) {
  const auto small = rows_by_name(count_flops(ModelConfig::make(Variant::base, 64)));
  const auto big = rows_by_name(count_flops(ModelConfig::make(Variant::base, 128)));
  int checked = 0;
  for (const auto& [name, r] : small) {
    if (r.kind != CostKind::conv) continue;
    EXPECT_EQ(big.at(name).macs, 4 * r.macs) << name;
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(CountParams, AnalyticEqualsEnumeratedForEveryVariant) {
  for (auto v : {Variant::base, Variant::large}) {
    for (auto skip : {SkipMode::none, SkipMode::skip1, SkipMode::skip3, SkipMode::horizontal}) {
      for (auto down : {DownsampleMode::maxpool, DownsampleMode::conv}) {
        auto cfg = ModelConfig::make(v, 64);
        cfg.skip_mode = skip;
        cfg.downsample_mode = down;
        Model<float> m(cfg, 0);
        const auto enumerated = count_params(m);
        EXPECT_EQ(enumerated.total_params, count_flops(cfg).total_params)
            << to_string(v) << " " << to_string(skip) << " " << to_string(down);
      }
    }
  }
}

TEST(CountParams, BaseAndLargeTotals) {
  Model<float> base(ModelConfig::make(Variant::base), 0);
  Model<float> large(ModelConfig::make(Variant::large), 0);
  EXPECT_EQ(count_params(base).total_params, 1'648'945);
  EXPECT_EQ(count_params(large).total_params, 7'300'449);
}

TEST(InstrumentedMacs, MatchAnalyticByKind) {
  for (auto down : {DownsampleMode::maxpool, DownsampleMode::conv}) {
    auto cfg = ModelConfig::make(Variant::base, 64);
    cfg.downsample_mode = down;
    Model<float> m(cfg, 0);
    const auto measured = instrumented_macs(m, 2);
    const auto report = count_flops(cfg, 2);
    EXPECT_EQ(measured.conv, report.macs_of(CostKind::conv));
    EXPECT_EQ(measured.conv_transpose, report.macs_of(CostKind::conv_transpose));
    EXPECT_EQ(measured.linear, report.macs_of(CostKind::linear));
    EXPECT_EQ(measured.attention_scores, report.macs_of(CostKind::attention_scores));
    EXPECT_EQ(measured.attention_values, report.macs_of(CostKind::attention_values));
  }
}

}  // namespace
}  // namespace muvit

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "muvit/accounting.hpp"
#include "muvit/checkpoint.hpp"
#include "muvit/data.hpp"
#include "test_util.hpp"

namespace muvit {
namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> bytes_of(const std::string& header, std::size_t payload, std::uint8_t fill = 0) {
  std::vector<std::uint8_t> b(header.begin(), header.end());
  b.insert(b.end(), payload, fill);
  return b;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("muvit_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- PNM ----------------------------------------------------------------

TEST(Pnm, GrayFourByFour) {
  auto b = bytes_of("P5 4 4 255\n", 16);
  b[11 + 5] = 255;
  const auto r = parse_pnm(b);
  EXPECT_EQ(r.width, 4);
  EXPECT_EQ(r.height, 4);
  EXPECT_EQ(r.channels, 1);
  const auto m = raster_to_mask(r);
  EXPECT_EQ(m.shape(), (Shape{1, 4, 4}));
  EXPECT_EQ(m[5], 1.0f);
  EXPECT_EQ(m[4], 0.0f);
}

TEST(Pnm, MaskThresholdAt128) {
  Raster r{2, 1, 1, {127, 128}};
  const auto m = raster_to_mask(r);
  EXPECT_EQ(m[0], 0.0f);
  EXPECT_EQ(m[1], 1.0f);
}

TEST(Pnm, RgbRoundTripIsBitwise) {
  Raster r{5, 3, 3, {}};
  for (int i = 0; i < 45; ++i) r.pixels.push_back(static_cast<std::uint8_t>(i * 37 % 256));
  const auto encoded = encode_pnm(r);
  const auto back = encode_pnm(image_to_raster(raster_to_image(parse_pnm(encoded))));
  EXPECT_EQ(back, encoded);
}

TEST(Pnm, GrayImagesAreReplicated) {
  Raster r{1, 1, 1, {51}};
  const auto img = raster_to_image(r);
  EXPECT_EQ(img.shape(), (Shape{3, 1, 1}));
  for (int c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(img[c], 0.2f);
}

TEST(Pnm, RejectsSixteenBitWithOffset) {
  try {
    parse_pnm(bytes_of("P5 4 4 65535\n", 32));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 7);
  }
}

TEST(Pnm, RejectsBadMagicAndTruncation) {
  try {
    parse_pnm(bytes_of("P2 4 4 255\n", 16));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0);
  }
  try {
    parse_pnm(bytes_of("P6 2 2 255\n", 11));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 22);  // where the payload ran out
  }
}

TEST(Pnm, HeaderComments) {
  const auto r = parse_pnm(bytes_of("P5\n# made by hand\n2 1\n255\n", 2, 9));
  EXPECT_EQ(r.width, 2);
  EXPECT_EQ(r.pixels, (std::vector<std::uint8_t>{9, 9}));
}

// ---- synthetic data -----------------------------------------------------

TEST(Synth, DeterministicAndPurePerIndex) {
  const auto a = synth_dataset({7, 5, 64, 0.3, 0});
  const auto b = synth_dataset({7, 5, 64, 0.3, 0});
  for (int i = 0; i < 5; ++i) {
    EXPECT_TRUE(test::bitwise_equal(a[i].image, b[i].image));
    EXPECT_TRUE(test::bitwise_equal(a[i].mask, b[i].mask));
    EXPECT_EQ(a[i].id, b[i].id);
    const auto alone = synth_sample(7, i, 64, 0.3);
    EXPECT_TRUE(test::bitwise_equal(a[i].image, alone.image));
  }
  const auto tail = synth_dataset({7, 2, 64, 0.3, 3});
  EXPECT_TRUE(test::bitwise_equal(tail[0].image, a[3].image));
  EXPECT_FALSE(test::bitwise_equal(a[0].image, a[1].image));
}

TEST(Synth, ForegroundFractionBounded) {
  for (double difficulty : {0.0, 0.5, 1.0}) {
    for (const auto& s : synth_dataset({11, 40, 64, difficulty, 0})) {
      double fg = 0.0;
      for (float v : s.mask.data()) {
        ASSERT_TRUE(v == 0.0f || v == 1.0f);
        fg += v;
      }
      fg /= static_cast<double>(s.mask.numel());
      EXPECT_GE(fg, 0.02) << s.id;
      EXPECT_LE(fg, 0.5) << s.id;
    }
  }
}

TEST(Synth, EasyDataHasWideIntensityGap) {
  EXPECT_GE(synth_intensity_gap(0.0), 0.4);
  EXPECT_LT(synth_intensity_gap(1.0), synth_intensity_gap(0.0));
  // Measured gap on generated samples, before speckle blurs it much.
  double gap = 0.0;
  const auto data = synth_dataset({12, 20, 64, 0.0, 0});
  for (const auto& s : data) {
    double fg = 0, bg = 0, nf = 0, nb = 0;
    const std::size_t plane = s.mask.numel();
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = (s.image[i] + s.image[plane + i] + s.image[2 * plane + i]) / 3.0;
      (s.mask[i] > 0.5f ? fg : bg) += v;
      (s.mask[i] > 0.5f ? nf : nb) += 1;
    }
    gap += fg / nf - bg / nb;
  }
  EXPECT_GE(gap / data.size(), 0.3);
}

TEST(Synth, DatasetDirectoryRoundTrip) {
  const auto dir = scratch("ds");
  const auto data = synth_dataset({13, 3, 32, 0.2, 0});
  save_dataset_dir(dir.string(), data);
  const auto back = load_dataset_dir(dir.string());
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, data[i].id);
    EXPECT_TRUE(test::bitwise_equal(back[i].mask, data[i].mask));
    EXPECT_LE(test::max_abs_diff(back[i].image, data[i].image), 0.5 / 255.0 + 1e-7);
  }
  fs::remove_all(dir);
}

// ---- config -------------------------------------------------------------

TEST(Config, RoundTripAndRejection) {
  RunConfig c;
  c.model = ModelConfig::make(Variant::large, 128);
  c.model.skip_mode = SkipMode::horizontal;
  c.model.num_classes = 2;
  c.seed = 99;
  c.schedule = ScheduleKind::warmup_cosine;
  c.warmup_epochs = 3;
  const auto text = config_to_json(c);
  const auto back = config_from_json(text);
  EXPECT_EQ(config_to_json(back), text);
  EXPECT_EQ(back.model.channels, c.model.channels);
  EXPECT_THROW(config_from_json(R"({"variant":"base","epochz":3})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"variant":"base","batch":"8"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"variant":"base",)"), ParseError);
  EXPECT_THROW(config_from_json(R"({"input_size":100})"), ConfigError);
}

// ---- checkpoint ---------------------------------------------------------

Checkpoint trained_checkpoint() {
  RunConfig cfg;
  cfg.model = ModelConfig::make(Variant::base, 64);
  Model<float> m(cfg.model, 5);
  Sgd<float> opt(m.parameters());
  Tensor<float> x = test::random_tensor<float>({2, 3, 64, 64}, 6), y({2, 1, 64, 64});
  test::run_backward<float>([&] { return sum(m.forward(x)); });
  opt.step(0.01);
  return make_checkpoint(cfg, m, &opt);
}

TEST(Checkpoint, SaveLoadSaveIsBitwise) {
  const auto bytes = encode_checkpoint(trained_checkpoint());
  EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);
  const auto dir = scratch("ckpt");
  const auto path = (dir / "a.ckpt").string();
  save_checkpoint(path, decode_checkpoint(bytes));
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
  fs::remove_all(dir);
}

TEST(Checkpoint, RestoresModelAndOptimizer) {
  const auto ck = trained_checkpoint();
  Model<float> m(ck.config.model, 77);
  Sgd<float> opt(m.parameters());
  restore_model(ck, m);
  restore_optimizer(ck, opt);
  EXPECT_EQ(opt.steps(), 1);
  EXPECT_EQ(encode_checkpoint(make_checkpoint(ck.config, m, &opt)), encode_checkpoint(ck));
}

TEST(Checkpoint, LayoutHeader) {
  const auto bytes = encode_checkpoint(trained_checkpoint());
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MUVT");
  EXPECT_EQ(bytes[4], kCheckpointVersion);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  EXPECT_EQ(bytes[16], '{');
  EXPECT_EQ(bytes[16 + len - 1], '}');
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto good = encode_checkpoint(trained_checkpoint());
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), ParseError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), ParseError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    EXPECT_THROW(decode_checkpoint({good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)}), ParseError)
        << cut;
  }
}

TEST(Checkpoint, RejectsDuplicateNames) {
  auto ck = trained_checkpoint();
  ck.tensors.push_back(ck.tensors.front());
  EXPECT_THROW(encode_checkpoint(ck), UsageError);
}

TEST(Checkpoint, MismatchedConfigNamesTheTensor) {
  const auto ck = trained_checkpoint();
  auto other = ck.config.model;
  other.channels = {16, 16, 32, 64, 96};
  Model<float> m(other, 0);
  try {
    restore_model(ck, m);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_TRUE(test::contains(e.what(), "encoder.stage5")) << e.what();
  }
}

TEST(Checkpoint, TensorCountMatchesParameterRows) {
  RunConfig cfg;
  cfg.model = ModelConfig::make(Variant::base);
  Model<float> m(cfg.model, 0);
  const auto ck = make_checkpoint(cfg, m);
  EXPECT_FALSE(ck.has_optimizer());
  EXPECT_EQ(ck.tensors.size(), count_params(m).rows.size());
}

}  // namespace
}  // namespace muvit

#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "muvit/muvit.h"

namespace {

using json = nlohmann::json;

struct StrDel {
  void operator()(char* s) const { muvit_string_free(s); }
};
struct ModelDel {
  void operator()(muvit_model* m) const { muvit_model_free(m); }
};
struct DataDel {
  void operator()(muvit_dataset* d) const { muvit_dataset_free(d); }
};
using Str = std::unique_ptr<char, StrDel>;
using ModelPtr = std::unique_ptr<muvit_model, ModelDel>;
using DataPtr = std::unique_ptr<muvit_dataset, DataDel>;

const char* kDesk = R"({"variant":"base","input_size":64,"seed":3,"epochs":1,"batch":2})";

ModelPtr make_model(const char* cfg = kDesk) {
  muvit_model* m = nullptr;
  EXPECT_EQ(muvit_model_create(cfg, &m), MUVIT_OK) << muvit_last_error();
  return ModelPtr(m);
}

DataPtr synth(std::uint64_t seed, std::int64_t n) {
  muvit_dataset* d = nullptr;
  EXPECT_EQ(muvit_dataset_synth(seed, n, 64, 0.0, &d), MUVIT_OK) << muvit_last_error();
  return DataPtr(d);
}

TEST(CApi, VersionAndStatusNames) {
  EXPECT_NE(std::string(muvit_version()), "");
  EXPECT_EQ(std::string(muvit_status_name(MUVIT_ERR_CONFIG)), "configuration error");
}

TEST(CApi, ConfigErrorsAreReported) {
  muvit_model* m = nullptr;
  EXPECT_EQ(muvit_model_create(R"({"variant":"tiny"})", &m), MUVIT_ERR_CONFIG);
  EXPECT_EQ(m, nullptr);
  EXPECT_NE(std::string(muvit_last_error()).find("tiny"), std::string::npos);
  EXPECT_EQ(muvit_model_create("{", &m), MUVIT_ERR_PARSE);
  EXPECT_EQ(muvit_model_create(nullptr, &m), MUVIT_ERR_USAGE);
}

TEST(CApi, ForwardShapesAndBufferCheck) {
  auto m = make_model();
  std::vector<float> images(2 * 3 * 64 * 64, 0.25f), logits(2 * 64 * 64);
  ASSERT_EQ(muvit_model_forward(m.get(), images.data(), 2, logits.data(), logits.size()), MUVIT_OK);
  for (float v : logits) ASSERT_TRUE(std::isfinite(v));
  EXPECT_EQ(muvit_model_forward(m.get(), images.data(), 2, logits.data(), logits.size() - 1), MUVIT_ERR_USAGE);
}

TEST(CApi, CountReport) {
  char* raw = nullptr;
  ASSERT_EQ(muvit_count(R"({"variant":"base","input_size":256})", &raw), MUVIT_OK) << muvit_last_error();
  Str s(raw);
  const auto j = json::parse(s.get());
  EXPECT_EQ(j["total_params"].get<std::int64_t>(), 1'648'945);
  EXPECT_GT(j["layers"].size(), 100u);
}

TEST(CApi, SaveLoadRoundTripIsBitwise) {
  auto m = make_model();
  const auto dir = std::filesystem::temp_directory_path() / ("muvit_capi_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
  ASSERT_EQ(muvit_model_save(m.get(), a.c_str()), MUVIT_OK);
  muvit_model* raw = nullptr;
  ASSERT_EQ(muvit_model_load(a.c_str(), &raw), MUVIT_OK);
  ModelPtr loaded(raw);
  ASSERT_EQ(muvit_model_save(loaded.get(), b.c_str()), MUVIT_OK);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(muvit_model_load((dir / "missing.ckpt").string().c_str(), &raw), MUVIT_ERR_IO);
  std::filesystem::remove_all(dir);
}

TEST(CApi, TrainEvaluateSlice) {
  auto m = make_model();
  auto all = synth(5, 6);
  EXPECT_EQ(muvit_dataset_size(all.get()), 6);
  muvit_dataset *tr = nullptr, *va = nullptr;
  ASSERT_EQ(muvit_dataset_slice(all.get(), 0, 4, &tr), MUVIT_OK);
  ASSERT_EQ(muvit_dataset_slice(all.get(), 4, 2, &va), MUVIT_OK);
  DataPtr train(tr), val(va);
  EXPECT_EQ(muvit_dataset_slice(all.get(), 5, 2, &tr), MUVIT_ERR_USAGE);

  char* hist = nullptr;
  ASSERT_EQ(muvit_train(m.get(), train.get(), val.get(), nullptr, &hist), MUVIT_OK) << muvit_last_error();
  const auto h = json::parse(Str(hist).get());
  ASSERT_EQ(h["epochs"].size(), 1u);
  EXPECT_GE(h["best_val_iou"].get<double>(), 0.0);

  char* rep = nullptr;
  ASSERT_EQ(muvit_evaluate(m.get(), val.get(), 0.5, &rep), MUVIT_OK);
  const auto r = json::parse(Str(rep).get());
  EXPECT_EQ(r["samples"].size(), 2u);
  const double iou = r["mean_iou"], f1 = r["mean_f1"];
  EXPECT_GE(iou, 0.0);
  EXPECT_LE(f1, 1.0);
}

TEST(CApi, GradcheckOps) {
  char* raw = nullptr;
  ASSERT_EQ(muvit_gradcheck("ops", 1e-5, &raw), MUVIT_OK) << muvit_last_error();
  const auto j = json::parse(Str(raw).get());
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_EQ(muvit_gradcheck("nope", 1e-5, &raw), MUVIT_ERR_CONFIG);
}

}  // namespace

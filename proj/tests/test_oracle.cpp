// Operators against reference values computed by an independent framework in
// float64 (tools/oracle/make_fixtures.py). Gradients are of sum(out * r).

#include <gtest/gtest.h>

#include <json.hpp>

#include <fstream>
#include <string>

#include "muvit/loss.hpp"
#include "test_util.hpp"

namespace muvit {
namespace {

using json = nlohmann::json;
using T = double;

constexpr double kForwardTol = 1e-10;
constexpr double kGradTol = 1e-9;

const json& fixtures() {
  static const json j = [] {
    std::ifstream in(MUVIT_FIXTURE_DIR "/oracle.json");
    if (!in) throw std::runtime_error("missing oracle.json");
    return json::parse(in);
  }();
  return j;
}

Tensor<T> tensor(const json& j, bool grad = false) {
  Tensor<T> t(j["shape"].get<Shape>(), j["data"].get<std::vector<double>>());
  if (grad) t.set_requires_grad();
  return t;
}

double max_diff(std::span<const T> got, const json& want) {
  const auto w = want["data"].get<std::vector<double>>();
  if (got.size() != w.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) m = std::max(m, std::abs(got[i] - w[i]));
  return m;
}

void expect_out(const Tensor<T>& got, const json& want) {
  ASSERT_EQ(got.shape(), want["shape"].get<Shape>());
  EXPECT_LE(max_diff(got.data(), want), kForwardTol);
}

void expect_grad(const Tensor<T>& leaf, const json& want, const char* what) {
  ASSERT_TRUE(leaf.has_grad()) << what;
  EXPECT_LE(max_diff(leaf.grad(), want), kGradTol) << what;
}

/// Runs f under a graph, contracts its output with r and back-propagates.
template <typename F>
Tensor<T> forward_backward(const json& c, F&& f) {
  Tensor<T> out;
  test::run_backward<T>([&] {
    out = f();
    return sum(mul(out, tensor(c["r"])));
  });
  return out;
}

TEST(Oracle, Conv2d) {
  for (const auto& c : fixtures()["conv2d"]) {
    auto x = tensor(c["x"], true), w = tensor(c["w"], true), b = tensor(c["b"], true);
    const auto out = forward_backward(c, [&] { return conv2d(x, w, b, c["stride"], c["pad"], c["groups"]); });
    expect_out(out, c["out"]);
    expect_grad(x, c["gx"], "x");
    expect_grad(w, c["gw"], "w");
    expect_grad(b, c["gb"], "b");
  }
}

TEST(Oracle, ConvTranspose2d) {
  for (const auto& c : fixtures()["conv_transpose2d"]) {
    auto x = tensor(c["x"], true), w = tensor(c["w"], true), b = tensor(c["b"], true);
    const auto out = forward_backward(c, [&] { return conv_transpose2d(x, w, b, c["stride"]); });
    expect_out(out, c["out"]);
    expect_grad(x, c["gx"], "x");
    expect_grad(w, c["gw"], "w");
    expect_grad(b, c["gb"], "b");
  }
}

TEST(Oracle, Pool2d) {
  for (const auto& c : fixtures()["pool2d"]) {
    auto x = tensor(c["x"], true);
    const auto kind = c["kind"] == "max" ? PoolKind::max : PoolKind::avg;
    const int k = c["kernel"];
    expect_out(forward_backward(c, [&] { return pool2d(x, kind, k, k); }), c["out"]);
    expect_grad(x, c["gx"], "x");
  }
}

TEST(Oracle, BilinearAlignCorners) {
  for (const auto& c : fixtures()["bilinear"]) {
    auto x = tensor(c["x"], true);
    expect_out(forward_backward(c, [&] { return bilinear_upsample(x, c["scale"].get<int>()); }), c["out"]);
    expect_grad(x, c["gx"], "x");
  }
}

TEST(Oracle, BatchNormBothModes) {
  for (const auto& c : fixtures()["batchnorm2d"]) {
    auto x = tensor(c["x"], true), g = tensor(c["gamma"], true), b = tensor(c["beta"], true);
    auto rm = tensor(c["running_mean_in"]), rv = tensor(c["running_var_in"]);
    const bool training = c["training"];
    const auto out = forward_backward(c, [&] { return batchnorm2d(x, g, b, rm, rv, training); });
    expect_out(out, c["out"]);
    expect_grad(x, c["gx"], "x");
    expect_grad(g, c["ggamma"], "gamma");
    expect_grad(b, c["gbeta"], "beta");
    EXPECT_LE(max_diff(rm.data(), c["running_mean_out"]), kForwardTol);
    EXPECT_LE(max_diff(rv.data(), c["running_var_out"]), kForwardTol);
  }
}

TEST(Oracle, LayerNorm) {
  for (const auto& c : fixtures()["layernorm"]) {
    auto x = tensor(c["x"], true), g = tensor(c["gamma"], true), b = tensor(c["beta"], true);
    expect_out(forward_backward(c, [&] { return layernorm(x, g, b); }), c["out"]);
    expect_grad(x, c["gx"], "x");
    expect_grad(g, c["ggamma"], "gamma");
    expect_grad(b, c["gbeta"], "beta");
  }
}

TEST(Oracle, Activations) {
  for (const auto& c : fixtures()["activation"]) {
    auto x = tensor(c["x"], true);
    const std::string kind = c["kind"];
    const auto act = kind == "gelu" ? Activation::gelu : kind == "sigmoid" ? Activation::sigmoid
                                                                          : Activation::softmax_lastdim;
    expect_out(forward_backward(c, [&] { return activation(x, act); }), c["out"]);
    expect_grad(x, c["gx"], kind.c_str());
  }
}

TEST(Oracle, MultiHeadSelfAttention) {
  for (const auto& c : fixtures()["mhsa"]) {
    auto x = tensor(c["x"], true);
    AttentionWeights<T> w{tensor(c["wq"], true), tensor(c["bq"]), tensor(c["wk"], true), tensor(c["bk"]),
                          tensor(c["wv"], true), tensor(c["bv"]), tensor(c["wo"], true), tensor(c["bo"])};
    expect_out(forward_backward(c, [&] { return mhsa(x, c["heads"].get<int>(), w); }), c["out"]);
    expect_grad(x, c["gx"], "x");
    expect_grad(w.wq, c["gwq"], "wq");
    expect_grad(w.wk, c["gwk"], "wk");
    expect_grad(w.wv, c["gwv"], "wv");
    expect_grad(w.wo, c["gwo"], "wo");
  }
}

TEST(Oracle, SegmentationLoss) {
  for (const auto& c : fixtures()["seg_loss"]) {
    auto z = tensor(c["logits"], true);
    LossTerms<T> terms;
    test::run_backward<T>([&] {
      terms = seg_loss(z, tensor(c["target"]), c["smooth"].get<double>());
      return terms.total;
    });
    EXPECT_NEAR(terms.total[0], c["total"].get<double>(), kForwardTol);
    EXPECT_NEAR(terms.bce, c["bce"].get<double>(), kForwardTol);
    EXPECT_NEAR(terms.dice, c["dice"].get<double>(), kForwardTol);
    expect_grad(z, c["gz"], "logits");
  }
}

}  // namespace
}  // namespace muvit

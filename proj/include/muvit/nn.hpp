#pragma once

// Parameterized layers and the composite blocks of the network: ConvUtr,
// large-kernel local-global-local (LKLGL), the ViT bottleneck block, the
// downsampled skip adapter and the cascaded decoder block.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "muvit/ops.hpp"

namespace muvit::nn {

using Rng = std::mt19937_64;

/// Receives every state tensor with its dotted name. `trainable` is false for
/// running statistics.
template <typename T>
using StateVisitor = std::function<void(const std::string& name, Tensor<T>& t, bool trainable)>;

/// He-normal: N(0, 2/fan_in).
template <typename T>
void he_normal(Tensor<T>& t, std::int64_t fan_in, Rng& rng);

/// N(0, std²) truncated to ±2·std by resampling.
template <typename T>
void trunc_normal(Tensor<T>& t, double std, Rng& rng);

template <typename T>
struct Conv2d {
  Tensor<T> weight, bias;
  int stride = 1, pad = 0, groups = 1;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int pad, int groups, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

template <typename T>
struct ConvTranspose2d {
  Tensor<T> weight, bias;  // weight: [in, out, k, k]
  int stride = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int kernel, int stride, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta, running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);
  Tensor<T> operator()(const Tensor<T>& x, bool training);
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

template <typename T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

/// Position-wise feed-forward: fc2(GELU(fc1(x))).
template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(int dim, int ratio, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

template <typename T>
struct Attention {
  Linear<T> q, k, v, o;
  int heads = 1;

  Attention() = default;
  Attention(int dim, int heads, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& tokens) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

/// Y = BN(GELU(DW(X))) + X;  Z = BN(GELU(PW(Y)));  out = BN(GELU(PW(Z))) + Y.
template <typename T>
struct ConvUtrBlock {
  Conv2d<T> dw, pw1, pw2;
  BatchNorm2d<T> bn1, bn2, bn3;

  ConvUtrBlock() = default;
  ConvUtrBlock(int dim, int kernel, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, bool training);
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

struct LklglOptions {
  int kernel = 9;
  int pool_ratio = 2;
  int ffn_ratio = 4;
  int heads = 2;
  /// Attention on the full grid, pooling afterwards (the order as printed in
  /// the block equation). Off: pool first so attention sees (H/p)(W/p) tokens.
  bool literal_order = false;
};

/// X = DSConv(LN(in)) + in
/// Y = FFN(LN(X)) + X
/// Z = TransConv(Attn(Pool(LN(Y)))) + Y
/// out = FFN(LN(Z)) + Z
template <typename T>
struct LklglBlock {
  LayerNorm<T> norm1, norm2, norm3, norm4;
  Conv2d<T> dw, pw;
  Mlp<T> ffn1, ffn2;
  Attention<T> attn;
  ConvTranspose2d<T> up;
  LklglOptions opts;

  LklglBlock() = default;
  LklglBlock(int dim, const LklglOptions& opts, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);

  /// Number of tokens the attention step sees for an H x W input.
  std::int64_t attention_tokens(std::int64_t height, std::int64_t width) const;
};

/// Pre-norm transformer block on [N,T,d].
template <typename T>
struct VitBlock {
  LayerNorm<T> norm1, norm2;
  Attention<T> attn;
  Mlp<T> ffn;

  VitBlock() = default;
  VitBlock(int dim, int heads, int ffn_ratio, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& tokens) const;
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

/// [2x2 max-pool] -> conv3x3-ReLU-BN -> conv3x3-ReLU-BN.
template <typename T>
struct SkipAdapter {
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
  bool downsample = true;

  SkipAdapter() = default;
  SkipAdapter(int in, int out, bool downsample, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, bool training);
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

/// Bilinear x2 -> [concat skip] -> conv3x3 -> BN -> ReLU.
template <typename T>
struct DecoderBlock {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  DecoderBlock() = default;
  DecoderBlock(int in, int skip, int out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>* skip, bool training);
  void visit(const std::string& prefix, const StateVisitor<T>& f);
};

}  // namespace muvit::nn

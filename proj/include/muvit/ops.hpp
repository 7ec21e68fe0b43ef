#pragma once

// Differentiable operators over NCHW feature maps and [N, T, d] token
// sequences. Every function is instantiated for float and double.

#include "muvit/tensor.hpp"

namespace muvit {

// ---- convolution --------------------------------------------------------

/// Grouped 2-D cross-correlation. x: [N,Ci,H,W], w: [Co,Ci/groups,kh,kw],
/// bias: [Co] or undefined. groups == Ci gives a depthwise convolution.
/// Throws ConfigError when (H + 2*pad - kh) is not a multiple of stride.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride = 1,
                 int pad = 0, int groups = 1);

/// Transposed convolution without padding. x: [N,Ci,H,W], w: [Ci,Co,kh,kw].
/// Output spatial size is (H-1)*stride + kh.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           int stride);

// ---- resampling ---------------------------------------------------------

enum class PoolKind { max, avg };

/// Max-pool backward routes to the first row-major maximum of each window.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int kernel, int stride);

/// Align-corners bilinear upsampling by an integer factor >= 2.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale);

// ---- normalization ------------------------------------------------------

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kLayerNormEps = 1e-6;

/// Per-channel normalization over N*H*W. In training mode uses batch
/// statistics and updates the running buffers in place (biased variance for
/// normalization, unbiased for the running estimate).
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

/// Normalizes each vector along the last dimension.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps = kLayerNormEps);

// ---- activations --------------------------------------------------------

enum class Activation { gelu, relu, sigmoid, softmax_lastdim };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) { return activation(x, Activation::gelu); }
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) { return activation(x, Activation::softmax_lastdim); }

// ---- dense algebra ------------------------------------------------------

/// y = x Wᵀ + b over the last dimension. w: [dout, din].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

enum class MacTag { linear, attention_scores, attention_values };

/// Batched product of [B,M,K] with [B,K,N] (or with [B,N,K] transposed).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b,
              MacTag tag = MacTag::linear);

template <typename T>
struct AttentionWeights {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Scaled dot-product multi-head self-attention on x: [N,T,d], scaling
/// 1/sqrt(d/heads), with output projection.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, int heads, const AttentionWeights<T>& w);

// ---- elementwise / structural ------------------------------------------

/// a + b. b may equal a's shape or have leading dimension 1 (broadcast over
/// the batch).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// [N,C,H,W] -> [N,H*W,C]
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x);

/// [N,H*W,C] -> [N,C,H,W]
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& x, std::int64_t height, std::int64_t width);

/// [N,T,d] -> [N*heads,T,d/heads]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads);

/// [N*heads,T,dh] -> [N,T,heads*dh]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, int heads);

}  // namespace muvit

#include "muvit/nn.hpp"

#include <cmath>

namespace muvit::nn {

template <typename T>
void he_normal(Tensor<T>& t, std::int64_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void trunc_normal(Tensor<T>& t, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.data()) {
    double s = dist(rng);
    while (std::abs(s) > 2.0 * std) s = dist(rng);
    v = static_cast<T>(s);
  }
}

namespace {

template <typename T>
Tensor<T> param(Shape shape, T fill = T(0)) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

// LayerNorm over channels of an NCHW map.
template <typename T>
Tensor<T> channel_norm(const LayerNorm<T>& norm, const Tensor<T>& x) {
  return from_tokens(norm(to_tokens(x)), x.dim(2), x.dim(3));
}

}  // namespace

// ---- layers -------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(int in, int out, int kernel, int stride_, int pad_, int groups_, Rng& rng)
    : stride(stride_), pad(pad_), groups(groups_) {
  if (in % groups != 0 || out % groups != 0) {
    throw ConfigError("conv: channels " + std::to_string(in) + "->" + std::to_string(out) +
                      " not divisible by groups " + std::to_string(groups));
  }
  weight = param<T>({out, in / groups, kernel, kernel});
  bias = param<T>({out});
  he_normal(weight, static_cast<std::int64_t>(in / groups) * kernel * kernel, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, stride, pad, groups);
}

template <typename T>
void Conv2d<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  f(prefix + ".weight", weight, true);
  f(prefix + ".bias", bias, true);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(int in, int out, int kernel, int stride_, Rng& rng)
    : stride(stride_) {
  weight = param<T>({in, out, kernel, kernel});
  bias = param<T>({out});
  // With kernel == stride every output pixel sees one tap per input channel.
  he_normal(weight, in, rng);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::operator()(const Tensor<T>& x) const {
  return conv_transpose2d(x, weight, bias, stride);
}

template <typename T>
void ConvTranspose2d<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  f(prefix + ".weight", weight, true);
  f(prefix + ".bias", bias, true);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels)
    : gamma(param<T>({channels}, T(1))),
      beta(param<T>({channels})),
      running_mean({channels}),
      running_var({channels}, T(1)) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(const Tensor<T>& x, bool training) {
  return batchnorm2d(x, gamma, beta, running_mean, running_var, training);
}

template <typename T>
void BatchNorm2d<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  f(prefix + ".weight", gamma, true);
  f(prefix + ".bias", beta, true);
  f(prefix + ".running_mean", running_mean, false);
  f(prefix + ".running_var", running_var, false);
}

template <typename T>
LayerNorm<T>::LayerNorm(int dim) : gamma(param<T>({dim}, T(1))), beta(param<T>({dim})) {}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return layernorm(x, gamma, beta);
}

template <typename T>
void LayerNorm<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  f(prefix + ".weight", gamma, true);
  f(prefix + ".bias", beta, true);
}

template <typename T>
Linear<T>::Linear(int in, int out, Rng& rng) : weight(param<T>({out, in})), bias(param<T>({out})) {
  trunc_normal(weight, 0.02, rng);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight, bias);
}

template <typename T>
void Linear<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  f(prefix + ".weight", weight, true);
  f(prefix + ".bias", bias, true);
}

template <typename T>
Mlp<T>::Mlp(int dim, int ratio, Rng& rng) : fc1(dim, dim * ratio, rng), fc2(dim * ratio, dim, rng) {}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  return fc2(gelu(fc1(x)));
}

template <typename T>
void Mlp<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  fc1.visit(prefix + ".fc1", f);
  fc2.visit(prefix + ".fc2", f);
}

template <typename T>
Attention<T>::Attention(int dim, int heads_, Rng& rng)
    : q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), o(dim, dim, rng), heads(heads_) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

template <typename T>
Tensor<T> Attention<T>::operator()(const Tensor<T>& tokens) const {
  const AttentionWeights<T> w{q.weight, q.bias, k.weight, k.bias,
                              v.weight, v.bias, o.weight, o.bias};
  return mhsa(tokens, heads, w);
}

template <typename T>
void Attention<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  q.visit(prefix + ".q", f);
  k.visit(prefix + ".k", f);
  v.visit(prefix + ".v", f);
  o.visit(prefix + ".proj", f);
}

// ---- blocks -------------------------------------------------------------

template <typename T>
ConvUtrBlock<T>::ConvUtrBlock(int dim, int kernel, Rng& rng)
    : dw(dim, dim, kernel, 1, kernel / 2, dim, rng),
      pw1(dim, dim, 1, 1, 0, 1, rng),
      pw2(dim, dim, 1, 1, 0, 1, rng),
      bn1(dim),
      bn2(dim),
      bn3(dim) {
  if (kernel % 2 == 0) throw ConfigError("ConvUtr kernel must be odd, got " + std::to_string(kernel));
}

template <typename T>
Tensor<T> ConvUtrBlock<T>::operator()(const Tensor<T>& x, bool training) {
  auto y = add(bn1(gelu(dw(x)), training), x);
  auto z = bn2(gelu(pw1(y)), training);
  return add(bn3(gelu(pw2(z)), training), y);
}

template <typename T>
void ConvUtrBlock<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  dw.visit(prefix + ".dw", f);
  bn1.visit(prefix + ".bn1", f);
  pw1.visit(prefix + ".pw1", f);
  bn2.visit(prefix + ".bn2", f);
  pw2.visit(prefix + ".pw2", f);
  bn3.visit(prefix + ".bn3", f);
}

template <typename T>
LklglBlock<T>::LklglBlock(int dim, const LklglOptions& o, Rng& rng)
    : norm1(dim),
      norm2(dim),
      norm3(dim),
      norm4(dim),
      dw(dim, dim, o.kernel, 1, o.kernel / 2, dim, rng),
      pw(dim, dim, 1, 1, 0, 1, rng),
      ffn1(dim, o.ffn_ratio, rng),
      ffn2(dim, o.ffn_ratio, rng),
      attn(dim, o.heads, rng),
      up(dim, dim, o.pool_ratio, o.pool_ratio, rng),
      opts(o) {
  if (o.kernel % 2 == 0) throw ConfigError("LKLGL kernel must be odd, got " + std::to_string(o.kernel));
  if (o.pool_ratio < 1) throw ConfigError("pool_ratio must be >= 1");
}

template <typename T>
Tensor<T> LklglBlock<T>::operator()(const Tensor<T>& in) const {
  const std::int64_t H = in.dim(2), W = in.dim(3);
  const int p = opts.pool_ratio;
  if (H % p != 0 || W % p != 0) {
    throw ConfigError("LKLGL: " + std::to_string(H) + "x" + std::to_string(W) +
                      " grid not divisible by pool ratio " + std::to_string(p));
  }
  auto x = add(pw(dw(channel_norm(norm1, in))), in);

  auto tx = to_tokens(x);
  auto y_tok = add(ffn1(norm2(tx)), tx);
  auto y = from_tokens(y_tok, H, W);

  auto n3 = norm3(y_tok);
  Tensor<T> pooled;
  if (opts.literal_order) {
    auto a = from_tokens(attn(n3), H, W);
    pooled = pool2d(a, PoolKind::avg, p, p);
  } else {
    auto g = pool2d(from_tokens(n3, H, W), PoolKind::avg, p, p);
    pooled = from_tokens(attn(to_tokens(g)), H / p, W / p);
  }
  auto z = add(up(pooled), y);

  auto tz = to_tokens(z);
  return from_tokens(add(ffn2(norm4(tz)), tz), H, W);
}

template <typename T>
std::int64_t LklglBlock<T>::attention_tokens(std::int64_t height, std::int64_t width) const {
  if (opts.literal_order) return height * width;
  return (height / opts.pool_ratio) * (width / opts.pool_ratio);
}

template <typename T>
void LklglBlock<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  norm1.visit(prefix + ".norm1", f);
  dw.visit(prefix + ".dw", f);
  pw.visit(prefix + ".pw", f);
  norm2.visit(prefix + ".norm2", f);
  ffn1.visit(prefix + ".ffn1", f);
  norm3.visit(prefix + ".norm3", f);
  attn.visit(prefix + ".attn", f);
  up.visit(prefix + ".up", f);
  norm4.visit(prefix + ".norm4", f);
  ffn2.visit(prefix + ".ffn2", f);
}

template <typename T>
VitBlock<T>::VitBlock(int dim, int heads, int ffn_ratio, Rng& rng)
    : norm1(dim), norm2(dim), attn(dim, heads, rng), ffn(dim, ffn_ratio, rng) {}

template <typename T>
Tensor<T> VitBlock<T>::operator()(const Tensor<T>& x) const {
  auto t = add(attn(norm1(x)), x);
  return add(ffn(norm2(t)), t);
}

template <typename T>
void VitBlock<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  norm1.visit(prefix + ".norm1", f);
  attn.visit(prefix + ".attn", f);
  norm2.visit(prefix + ".norm2", f);
  ffn.visit(prefix + ".ffn", f);
}

template <typename T>
SkipAdapter<T>::SkipAdapter(int in, int out, bool downsample_, Rng& rng)
    : conv1(in, out, 3, 1, 1, 1, rng),
      conv2(out, out, 3, 1, 1, 1, rng),
      bn1(out),
      bn2(out),
      downsample(downsample_) {}

template <typename T>
Tensor<T> SkipAdapter<T>::operator()(const Tensor<T>& x, bool training) {
  auto h = downsample ? pool2d(x, PoolKind::max, 2, 2) : x;
  h = bn1(relu(conv1(h)), training);
  return bn2(relu(conv2(h)), training);
}

template <typename T>
void SkipAdapter<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  conv1.visit(prefix + ".conv1", f);
  bn1.visit(prefix + ".bn1", f);
  conv2.visit(prefix + ".conv2", f);
  bn2.visit(prefix + ".bn2", f);
}

template <typename T>
DecoderBlock<T>::DecoderBlock(int in, int skip, int out, Rng& rng)
    : conv(in + skip, out, 3, 1, 1, 1, rng), bn(out) {}

template <typename T>
Tensor<T> DecoderBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>* skip, bool training) {
  auto h = bilinear_upsample(x, 2);
  if (skip != nullptr) {
    if (skip->dim(2) != h.dim(2) || skip->dim(3) != h.dim(3)) {
      throw ConfigError("decoder: skip " + shape_str(skip->shape()) +
                        " does not match upsampled " + shape_str(h.shape()));
    }
    h = concat_channels(h, *skip);
  }
  return relu(bn(conv(h), training));
}

template <typename T>
void DecoderBlock<T>::visit(const std::string& prefix, const StateVisitor<T>& f) {
  conv.visit(prefix + ".conv", f);
  bn.visit(prefix + ".bn", f);
}

#define MUVIT_INSTANTIATE(T)                                        \
  template void he_normal(Tensor<T>&, std::int64_t, Rng&);          \
  template void trunc_normal(Tensor<T>&, double, Rng&);             \
  template struct Conv2d<T>;                                        \
  template struct ConvTranspose2d<T>;                               \
  template struct BatchNorm2d<T>;                                   \
  template struct LayerNorm<T>;                                     \
  template struct Linear<T>;                                        \
  template struct Mlp<T>;                                           \
  template struct Attention<T>;                                     \
  template struct ConvUtrBlock<T>;                                  \
  template struct LklglBlock<T>;                                    \
  template struct VitBlock<T>;                                      \
  template struct SkipAdapter<T>;                                   \
  template struct DecoderBlock<T>;

MUVIT_INSTANTIATE(float)
MUVIT_INSTANTIATE(double)

}  // namespace muvit::nn

#include <cmath>

#include "kernels.hpp"
#include "muvit/ops.hpp"

namespace muvit {

using detail::ConstMapMat;
using detail::MapMat;
using detail::require;

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(x.ndim() >= 1, "linear: scalar input");
  detail::require_rank(w.shape(), 2, "linear weight");
  const std::int64_t din = x.dim(-1);
  const std::int64_t dout = w.dim(0);
  require(w.dim(1) == din, "linear: weight " + shape_str(w.shape()) + " does not accept input " +
                               shape_str(x.shape()));
  if (bias.defined()) {
    require(bias.ndim() == 1 && bias.dim(0) == dout,
            "linear: bias must have length " + std::to_string(dout));
  }
  const std::int64_t rows = din == 0 ? 0 : static_cast<std::int64_t>(x.numel()) / din;
  Shape shape = x.shape();
  shape.back() = dout;
  Tensor<T> out(shape);
  detail::count_macs(&MacCounters::linear, rows * din * dout);

  ConstMapMat<T> xm(x.ptr(), rows, din);
  ConstMapMat<T> wm(w.ptr(), dout, din);
  MapMat<T> om(out.ptr(), rows, dout);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.ptr(), dout);
    om.rowwise() += bv;
  }

  auto xs = x.storage();
  auto ws = w.storage();
  auto bs = bias.defined() ? bias.storage() : nullptr;
  record_op<T>("linear", {x, w, bias}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    auto gw = grad_target(ws);
    auto gb = grad_target(bs);
    ConstMapMat<T> go(gout.data(), rows, dout);
    if (!gx.empty()) {
      MapMat<T> gxm(gx.data(), rows, din);
      gxm.noalias() += go * ConstMapMat<T>(ws->data.data(), dout, din);
    }
    if (!gw.empty()) {
      MapMat<T> gwm(gw.data(), dout, din);
      gwm.noalias() += go.transpose() * ConstMapMat<T>(xs->data.data(), rows, din);
    }
    if (!gb.empty()) {
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < dout; ++j) gb[j] += go(r, j);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b, MacTag tag) {
  detail::require_rank(a.shape(), 3, "bmm");
  detail::require_rank(b.shape(), 3, "bmm");
  const std::int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2);
  const std::int64_t N = transpose_b ? b.dim(1) : b.dim(2);
  const std::int64_t Kb = transpose_b ? b.dim(2) : b.dim(1);
  require(b.dim(0) == B && Kb == K,
          "bmm: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor<T> out({B, M, N});
  auto field = tag == MacTag::attention_scores   ? &MacCounters::attention_scores
               : tag == MacTag::attention_values ? &MacCounters::attention_values
                                                 : &MacCounters::linear;
  detail::count_macs(field, B * M * N * K);

  for (std::int64_t i = 0; i < B; ++i) {
    ConstMapMat<T> am(a.ptr() + i * M * K, M, K);
    MapMat<T> om(out.ptr() + i * M * N, M, N);
    if (transpose_b) {
      om.noalias() = am * ConstMapMat<T>(b.ptr() + i * N * K, N, K).transpose();
    } else {
      om.noalias() = am * ConstMapMat<T>(b.ptr() + i * K * N, K, N);
    }
  }

  auto as = a.storage();
  auto bs = b.storage();
  record_op<T>("bmm", {a, b}, out, [=](std::span<const T> gout) {
    auto ga = grad_target(as);
    auto gb = grad_target(bs);
    for (std::int64_t i = 0; i < B; ++i) {
      ConstMapMat<T> go(gout.data() + i * M * N, M, N);
      ConstMapMat<T> am(as->data.data() + i * M * K, M, K);
      if (transpose_b) {
        ConstMapMat<T> bm(bs->data.data() + i * N * K, N, K);
        if (!ga.empty()) MapMat<T>(ga.data() + i * M * K, M, K).noalias() += go * bm;
        if (!gb.empty()) MapMat<T>(gb.data() + i * N * K, N, K).noalias() += go.transpose() * am;
      } else {
        ConstMapMat<T> bm(bs->data.data() + i * K * N, K, N);
        if (!ga.empty()) MapMat<T>(ga.data() + i * M * K, M, K).noalias() += go * bm.transpose();
        if (!gb.empty()) MapMat<T>(gb.data() + i * K * N, K, N).noalias() += am.transpose() * go;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, int heads, const AttentionWeights<T>& w) {
  detail::require_rank(x.shape(), 3, "mhsa");
  const std::int64_t d = x.dim(2);
  require(heads >= 1 && d % heads == 0, "mhsa: dim " + std::to_string(d) +
                                            " not divisible by " + std::to_string(heads) +
                                            " heads");
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(d / heads));
  auto q = split_heads(linear(x, w.wq, w.bq), heads);
  auto k = split_heads(linear(x, w.wk, w.bk), heads);
  auto v = split_heads(linear(x, w.wv, w.bv), heads);
  auto scores = scale(bmm(q, k, true, MacTag::attention_scores), inv_scale);
  auto attn = softmax(scores);
  auto ctx = merge_heads(bmm(attn, v, false, MacTag::attention_values), heads);
  return linear(ctx, w.wo, w.bo);
}

#define MUVIT_INSTANTIATE(T)                                                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, MacTag);         \
  template Tensor<T> mhsa(const Tensor<T>&, int, const AttentionWeights<T>&);

MUVIT_INSTANTIATE(float)
MUVIT_INSTANTIATE(double)

}  // namespace muvit

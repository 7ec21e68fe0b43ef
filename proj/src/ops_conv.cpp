#include <vector>

#include "kernels.hpp"
#include "muvit/ops.hpp"

namespace muvit {

using detail::ConstMapMat;
using detail::MapMat;
using detail::require;

namespace {

template <typename T>
void depthwise_forward(const T* x, const T* w, const T* b, std::int64_t N, std::int64_t C,
                       std::int64_t H, std::int64_t W, int kh, int kw, int stride, int pad,
                       std::int64_t Ho, std::int64_t Wo, T* out) {
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* img = x + (n * C + c) * H * W;
      const T* ker = w + c * kh * kw;
      T* dst = out + (n * C + c) * Ho * Wo;
      const T bias = b ? b[c] : T(0);
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          T acc = T(0);
          for (int ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const T* row = img + iy * W;
            const T* krow = ker + ky * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < W) acc += row[ix] * krow[kx];
            }
          }
          dst[oy * Wo + ox] = acc + bias;
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* gout, std::int64_t N, std::int64_t C,
                        std::int64_t H, std::int64_t W, int kh, int kw, int stride, int pad,
                        std::int64_t Ho, std::int64_t Wo, T* gx, T* gw, T* gb) {
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* img = x + (n * C + c) * H * W;
      const T* ker = w + c * kh * kw;
      const T* go = gout + (n * C + c) * Ho * Wo;
      T* gimg = gx ? gx + (n * C + c) * H * W : nullptr;
      T* gker = gw ? gw + c * kh * kw : nullptr;
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const T g = go[oy * Wo + ox];
          if (gb) gb[c] += g;
          for (int ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              if (gker) gker[ky * kw + kx] += g * img[iy * W + ix];
              if (gimg) gimg[iy * W + ix] += g * ker[ky * kw + kx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad, int groups) {
  detail::require_rank(x.shape(), 4, "conv2d");
  detail::require_rank(w.shape(), 4, "conv2d weight");
  require(stride >= 1 && pad >= 0 && groups >= 1, "conv2d: invalid stride/pad/groups");
  const std::int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), Cig = w.dim(1);
  const int kh = static_cast<int>(w.dim(2)), kw = static_cast<int>(w.dim(3));
  require(Ci % groups == 0 && Co % groups == 0,
          "conv2d: channels " + std::to_string(Ci) + "->" + std::to_string(Co) +
              " not divisible by groups " + std::to_string(groups));
  require(Cig == Ci / groups, "conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                                  shape_str(x.shape()) + " with groups " + std::to_string(groups));
  if (bias.defined()) {
    require(bias.ndim() == 1 && bias.dim(0) == Co, "conv2d: bias must have length " + std::to_string(Co));
  }
  const std::int64_t span_h = H + 2 * pad - kh, span_w = W + 2 * pad - kw;
  require(span_h >= 0 && span_w >= 0, "conv2d: kernel larger than padded input");
  require(span_h % stride == 0 && span_w % stride == 0,
          "conv2d: output size not integral for input " + shape_str(x.shape()) + ", kernel " +
              std::to_string(kh) + ", stride " + std::to_string(stride) + ", pad " +
              std::to_string(pad));
  const std::int64_t Ho = span_h / stride + 1, Wo = span_w / stride + 1;
  const std::int64_t Cog = Co / groups;
  const std::int64_t K = Cig * kh * kw;
  const std::int64_t HWo = Ho * Wo;

  Tensor<T> out({N, Co, Ho, Wo});
  detail::count_macs(&MacCounters::conv, N * Co * HWo * K);

  const bool depthwise = groups == Ci && Cig == 1 && Co == Ci;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
  const T* bptr = bias.defined() ? bias.ptr() : nullptr;

  if (depthwise) {
    depthwise_forward(x.ptr(), w.ptr(), bptr, N, Ci, H, W, kh, kw, stride, pad, Ho, Wo, out.ptr());
  } else {
    AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(K * HWo));
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t g = 0; g < groups; ++g) {
        const T* img = x.ptr() + (n * Ci + g * Cig) * H * W;
        const T* colp = img;
        if (!pointwise) {
          detail::im2col(img, Cig, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
          colp = cols.data();
        }
        ConstMapMat<T> wm(w.ptr() + g * Cog * K, Cog, K);
        ConstMapMat<T> cm(colp, K, HWo);
        MapMat<T> om(out.ptr() + (n * Co + g * Cog) * HWo, Cog, HWo);
        om.noalias() = wm * cm;
        if (bptr) {
          for (std::int64_t o = 0; o < Cog; ++o) om.row(o).array() += bptr[g * Cog + o];
        }
      }
    }
  }

  auto xs = x.storage();
  auto ws = w.storage();
  auto bs = bias.defined() ? bias.storage() : nullptr;
  record_op<T>("conv2d", {x, w, bias}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    auto gw = grad_target(ws);
    auto gb = grad_target(bs);
    if (depthwise) {
      depthwise_backward(xs->data.data(), ws->data.data(), gout.data(), N, Ci, H, W, kh, kw, stride,
                         pad, Ho, Wo, gx.empty() ? nullptr : gx.data(),
                         gw.empty() ? nullptr : gw.data(), gb.empty() ? nullptr : gb.data());
      return;
    }
    AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(K * HWo));
    AlignedVector<T> dcols(pointwise || gx.empty() ? 0 : static_cast<std::size_t>(K * HWo));
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t g = 0; g < groups; ++g) {
        ConstMapMat<T> go(gout.data() + (n * Co + g * Cog) * HWo, Cog, HWo);
        if (!gb.empty()) {
          for (std::int64_t o = 0; o < Cog; ++o) gb[g * Cog + o] += go.row(o).sum();
        }
        const T* img = xs->data.data() + (n * Ci + g * Cig) * H * W;
        if (!gw.empty()) {
          const T* colp = img;
          if (!pointwise) {
            detail::im2col(img, Cig, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
            colp = cols.data();
          }
          ConstMapMat<T> cm(colp, K, HWo);
          MapMat<T> gwm(gw.data() + g * Cog * K, Cog, K);
          gwm.noalias() += go * cm.transpose();
        }
        if (!gx.empty()) {
          ConstMapMat<T> wm(ws->data.data() + g * Cog * K, Cog, K);
          T* gimg = gx.data() + (n * Ci + g * Cig) * H * W;
          if (pointwise) {
            MapMat<T> gxm(gimg, Cig, HWo);
            gxm.noalias() += wm.transpose() * go;
          } else {
            MapMat<T> dc(dcols.data(), K, HWo);
            dc.noalias() = wm.transpose() * go;
            detail::col2im(dcols.data(), Cig, H, W, kh, kw, stride, pad, Ho, Wo, gimg);
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           int stride) {
  detail::require_rank(x.shape(), 4, "conv_transpose2d");
  detail::require_rank(w.shape(), 4, "conv_transpose2d weight");
  require(stride >= 1, "conv_transpose2d: stride must be positive");
  const std::int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(w.dim(0) == Ci, "conv_transpose2d: weight " + shape_str(w.shape()) +
                              " does not match input channels " + std::to_string(Ci));
  const std::int64_t Co = w.dim(1);
  const int kh = static_cast<int>(w.dim(2)), kw = static_cast<int>(w.dim(3));
  if (bias.defined()) {
    require(bias.ndim() == 1 && bias.dim(0) == Co,
            "conv_transpose2d: bias must have length " + std::to_string(Co));
  }
  const std::int64_t Ho = (H - 1) * stride + kh, Wo = (W - 1) * stride + kw;
  const std::int64_t K = Co * kh * kw;
  const std::int64_t HW = H * W;

  Tensor<T> out({N, Co, Ho, Wo});
  detail::count_macs(&MacCounters::conv_transpose, N * Ci * HW * K);

  AlignedVector<T> cols(static_cast<std::size_t>(K * HW));
  ConstMapMat<T> wm(w.ptr(), Ci, K);
  for (std::int64_t n = 0; n < N; ++n) {
    ConstMapMat<T> xm(x.ptr() + n * Ci * HW, Ci, HW);
    MapMat<T> cm(cols.data(), K, HW);
    cm.noalias() = wm.transpose() * xm;
    T* dst = out.ptr() + n * Co * Ho * Wo;
    detail::col2im(cols.data(), Co, Ho, Wo, kh, kw, stride, 0, H, W, dst);
    if (bias.defined()) {
      for (std::int64_t c = 0; c < Co; ++c) {
        for (std::int64_t i = 0; i < Ho * Wo; ++i) dst[c * Ho * Wo + i] += bias[c];
      }
    }
  }

  auto xs = x.storage();
  auto ws = w.storage();
  auto bs = bias.defined() ? bias.storage() : nullptr;
  record_op<T>("conv_transpose2d", {x, w, bias}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    auto gw = grad_target(ws);
    auto gb = grad_target(bs);
    AlignedVector<T> gcols(static_cast<std::size_t>(K * HW));
    ConstMapMat<T> wmb(ws->data.data(), Ci, K);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* go = gout.data() + n * Co * Ho * Wo;
      if (!gb.empty()) {
        for (std::int64_t c = 0; c < Co; ++c) {
          T acc = T(0);
          for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += go[c * Ho * Wo + i];
          gb[c] += acc;
        }
      }
      if (gx.empty() && gw.empty()) continue;
      detail::im2col(go, Co, Ho, Wo, kh, kw, stride, 0, H, W, gcols.data());
      ConstMapMat<T> gc(gcols.data(), K, HW);
      if (!gx.empty()) {
        MapMat<T> gxm(gx.data() + n * Ci * HW, Ci, HW);
        gxm.noalias() += wmb * gc;
      }
      if (!gw.empty()) {
        ConstMapMat<T> xm(xs->data.data() + n * Ci * HW, Ci, HW);
        MapMat<T> gwm(gw.data(), Ci, K);
        gwm.noalias() += xm * gc.transpose();
      }
    }
  });
  return out;
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              int, int, int);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, int, int, int);
template Tensor<float> conv_transpose2d(const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, int);
template Tensor<double> conv_transpose2d(const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&, int);

}  // namespace muvit

#include <cmath>
#include <vector>

#include "kernels.hpp"
#include "muvit/ops.hpp"

namespace muvit {

using detail::require;

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int kernel, int stride) {
  detail::require_rank(x.shape(), 4, "pool2d");
  require(kernel >= 1 && stride >= 1, "pool2d: kernel and stride must be positive");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(H % stride == 0 && W % stride == 0 && H >= kernel && W >= kernel &&
              (H - kernel) % stride == 0 && (W - kernel) % stride == 0,
          "pool2d: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
              " not divisible for kernel " + std::to_string(kernel) + ", stride " +
              std::to_string(stride));
  const std::int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  Tensor<T> out({N, C, Ho, Wo});
  const std::int64_t planes = N * C;
  const T inv_area = T(1) / static_cast<T>(kernel * kernel);

  std::vector<std::int64_t> argmax;
  if (kind == PoolKind::max) argmax.resize(static_cast<std::size_t>(planes * Ho * Wo));

  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * H * W;
    T* dst = out.ptr() + p * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        const std::int64_t y0 = oy * stride, x0 = ox * stride;
        if (kind == PoolKind::max) {
          std::int64_t best = y0 * W + x0;
          T best_v = src[best];
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
              const std::int64_t idx = (y0 + ky) * W + x0 + kx;
              if (src[idx] > best_v || (std::isnan(src[idx]) && !std::isnan(best_v))) {
                best_v = src[idx];
                best = idx;
              }
            }
          }
          dst[oy * Wo + ox] = best_v;
          argmax[static_cast<std::size_t>(p * Ho * Wo + oy * Wo + ox)] = best;
        } else {
          T acc = T(0);
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) acc += src[(y0 + ky) * W + x0 + kx];
          }
          dst[oy * Wo + ox] = acc * inv_area;
        }
      }
    }
  }

  if (auto* trace = active_branch_trace()) {
    for (std::int64_t a : argmax) trace->mix(static_cast<std::uint64_t>(a));
  }

  auto xs = x.storage();
  record_op<T>(kind == PoolKind::max ? "max_pool2d" : "avg_pool2d", {x}, out,
               [=, argmax = std::move(argmax)](std::span<const T> gout) {
                 auto gx = grad_target(xs);
                 if (gx.empty()) return;
                 for (std::int64_t p = 0; p < planes; ++p) {
                   T* g = gx.data() + p * H * W;
                   const T* go = gout.data() + p * Ho * Wo;
                   for (std::int64_t o = 0; o < Ho * Wo; ++o) {
                     if (kind == PoolKind::max) {
                       g[argmax[static_cast<std::size_t>(p * Ho * Wo + o)]] += go[o];
                     } else {
                       const std::int64_t y0 = (o / Wo) * stride, x0 = (o % Wo) * stride;
                       const T share = go[o] * inv_area;
                       for (int ky = 0; ky < kernel; ++ky) {
                         for (int kx = 0; kx < kernel; ++kx) g[(y0 + ky) * W + x0 + kx] += share;
                       }
                     }
                   }
                 }
               });
  return out;
}

namespace {

struct Tap {
  std::int64_t lo, hi;
  double frac;  // weight of hi
};

std::vector<Tap> align_corner_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    if (in == 1 || out == 1) {
      taps[static_cast<std::size_t>(o)] = {0, 0, 0.0};
      continue;
    }
    // Exact rational position o*(in-1)/(out-1) split into integer and fraction.
    const std::int64_t num = o * (in - 1);
    const std::int64_t den = out - 1;
    const std::int64_t lo = num / den;
    const std::int64_t rem = num % den;
    const std::int64_t hi = rem == 0 ? lo : lo + 1;
    taps[static_cast<std::size_t>(o)] = {lo, hi, static_cast<double>(rem) / static_cast<double>(den)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale) {
  detail::require_rank(x.shape(), 4, "bilinear_upsample");
  require(scale >= 2, "bilinear_upsample: scale must be an integer >= 2");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = H * scale, Wo = W * scale;
  const auto ty = align_corner_taps(H, Ho);
  const auto tx = align_corner_taps(W, Wo);
  Tensor<T> out({N, C, Ho, Wo});
  const std::int64_t planes = N * C;
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * H * W;
    T* dst = out.ptr() + p * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      const T fy = static_cast<T>(a.frac);
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        const T fx = static_cast<T>(b.frac);
        const T top = src[a.lo * W + b.lo] * (T(1) - fx) + src[a.lo * W + b.hi] * fx;
        const T bot = src[a.hi * W + b.lo] * (T(1) - fx) + src[a.hi * W + b.hi] * fx;
        dst[oy * Wo + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }

  auto xs = x.storage();
  record_op<T>("bilinear_upsample", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    if (gx.empty()) return;
    for (std::int64_t p = 0; p < planes; ++p) {
      T* g = gx.data() + p * H * W;
      const T* go = gout.data() + p * Ho * Wo;
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        const auto& a = ty[static_cast<std::size_t>(oy)];
        const T fy = static_cast<T>(a.frac);
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const auto& b = tx[static_cast<std::size_t>(ox)];
          const T fx = static_cast<T>(b.frac);
          const T v = go[oy * Wo + ox];
          g[a.lo * W + b.lo] += v * (T(1) - fy) * (T(1) - fx);
          g[a.lo * W + b.hi] += v * (T(1) - fy) * fx;
          g[a.hi * W + b.lo] += v * fy * (T(1) - fx);
          g[a.hi * W + b.hi] += v * fy * fx;
        }
      }
    }
  });
  return out;
}

template Tensor<float> pool2d(const Tensor<float>&, PoolKind, int, int);
template Tensor<double> pool2d(const Tensor<double>&, PoolKind, int, int);
template Tensor<float> bilinear_upsample(const Tensor<float>&, int);
template Tensor<double> bilinear_upsample(const Tensor<double>&, int);

}  // namespace muvit

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "kernels.hpp"
#include "muvit/ops.hpp"

namespace muvit {

using detail::require;

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.numel();
  const T* p = x.ptr();
  T* o = out.ptr();
  switch (kind) {
    case Activation::gelu:
      for (std::size_t i = 0; i < n; ++i) {
        o[i] = T(0.5) * p[i] * (T(1) + std::erf(p[i] * static_cast<T>(std::numbers::sqrt2 / 2)));
      }
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) o[i] = p[i] > T(0) || std::isnan(p[i]) ? p[i] : T(0);  // NaN passes through
      if (auto* trace = active_branch_trace()) {
        for (std::size_t i = 0; i < n; ++i) trace->mix(p[i] > T(0) ? i : ~i);
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) o[i] = T(1) / (T(1) + std::exp(-p[i]));
      break;
    case Activation::softmax_lastdim: {
      require(x.ndim() >= 1 && x.dim(-1) > 0, "softmax: empty last dimension");
      const std::int64_t d = x.dim(-1);
      const std::int64_t rows = static_cast<std::int64_t>(n) / d;
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = p + r * d;
        T* dst = o + r * d;
        const T mx = *std::max_element(src, src + d);
        T s = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
          dst[j] = std::exp(src[j] - mx);
          s += dst[j];
        }
        for (std::int64_t j = 0; j < d; ++j) dst[j] /= s;
      }
      break;
    }
  }

  auto xs = x.storage();
  auto os = out.storage();
  const char* name = kind == Activation::gelu      ? "gelu"
                     : kind == Activation::relu    ? "relu"
                     : kind == Activation::sigmoid ? "sigmoid"
                                                   : "softmax";
  const std::int64_t d = x.ndim() >= 1 ? x.dim(-1) : 1;
  record_op<T>(name, {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    if (gx.empty()) return;
    const T* in = xs->data.data();
    const T* saved = os->data.data();
    switch (kind) {
      case Activation::gelu: {
        const T inv_sqrt2 = static_cast<T>(std::numbers::sqrt2 / 2);
        const T inv_sqrt2pi = static_cast<T>(std::numbers::inv_sqrtpi * std::numbers::sqrt2 / 2);
        for (std::size_t i = 0; i < n; ++i) {
          const T cdf = T(0.5) * (T(1) + std::erf(in[i] * inv_sqrt2));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * in[i] * in[i]);
          gx[i] += gout[i] * (cdf + in[i] * pdf);
        }
        break;
      }
      case Activation::relu:
        for (std::size_t i = 0; i < n; ++i) {
          if (in[i] > T(0)) gx[i] += gout[i];
        }
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += gout[i] * saved[i] * (T(1) - saved[i]);
        break;
      case Activation::softmax_lastdim: {
        const std::int64_t rows = static_cast<std::int64_t>(n) / d;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* y = saved + r * d;
          const T* g = gout.data() + r * d;
          T dot = T(0);
          for (std::int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
          T* gr = gx.data() + r * d;
          for (std::int64_t j = 0; j < d; ++j) gr[j] += y[j] * (g[j] - dot);
        }
        break;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  bool broadcast = false;
  if (!same && a.ndim() == b.ndim() && a.ndim() >= 1 && b.dim(0) == 1) {
    broadcast = std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1);
  }
  require(same || broadcast,
          "add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel(), m = b.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[broadcast ? i % m : i];
  auto as = a.storage();
  auto bs = b.storage();
  record_op<T>("add", {a, b}, out, [=](std::span<const T> gout) {
    auto ga = grad_target(as);
    auto gb = grad_target(bs);
    if (!ga.empty()) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += gout[i];
    }
    if (!gb.empty()) {
      for (std::size_t i = 0; i < n; ++i) gb[broadcast ? i % m : i] += gout[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "mul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  auto as = a.storage();
  auto bs = b.storage();
  record_op<T>("mul", {a, b}, out, [=](std::span<const T> gout) {
    auto ga = grad_target(as);
    auto gb = grad_target(bs);
    for (std::size_t i = 0; i < n; ++i) {
      if (!ga.empty()) ga[i] += gout[i] * bs->data[i];
      if (!gb.empty()) gb[i] += gout[i] * as->data[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * factor;
  auto xs = x.storage();
  record_op<T>("scale", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < n; ++i) gx[i] += gout[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  auto xs = x.storage();
  record_op<T>("sum", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    for (auto& g : gx) g += gout[0];
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == static_cast<std::int64_t>(x.numel()),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  auto xs = x.storage();
  record_op<T>("reshape", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
  });
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 4, "concat_channels");
  detail::require_rank(b.shape(), 4, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: mismatched " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> out({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(a.ptr() + n * Ca * HW, Ca * HW, out.ptr() + n * (Ca + Cb) * HW);
    std::copy_n(b.ptr() + n * Cb * HW, Cb * HW, out.ptr() + n * (Ca + Cb) * HW + Ca * HW);
  }
  auto as = a.storage();
  auto bs = b.storage();
  record_op<T>("concat_channels", {a, b}, out, [=](std::span<const T> gout) {
    auto ga = grad_target(as);
    auto gb = grad_target(bs);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* g = gout.data() + n * (Ca + Cb) * HW;
      if (!ga.empty()) {
        for (std::int64_t i = 0; i < Ca * HW; ++i) ga[n * Ca * HW + i] += g[i];
      }
      if (!gb.empty()) {
        for (std::int64_t i = 0; i < Cb * HW; ++i) gb[n * Cb * HW + i] += g[Ca * HW + i];
      }
    }
  });
  return out;
}

namespace {

// Generic 3-axis permutation helper: out[a][c][b] = in[a][b][c], i.e. swaps
// the two trailing axes of an [A,B,C] view.
template <typename T>
void swap_trailing(const T* in, std::int64_t A, std::int64_t B, std::int64_t C, T* out,
                   bool accumulate) {
  for (std::int64_t a = 0; a < A; ++a) {
    const T* src = in + a * B * C;
    T* dst = out + a * B * C;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t c = 0; c < C; ++c) {
        if (accumulate) {
          dst[c * B + b] += src[b * C + c];
        } else {
          dst[c * B + b] = src[b * C + c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "to_tokens");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out({N, HW, C});
  swap_trailing(x.ptr(), N, C, HW, out.ptr(), false);
  auto xs = x.storage();
  record_op<T>("to_tokens", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    if (!gx.empty()) swap_trailing(gout.data(), N, HW, C, gx.data(), true);
  });
  return out;
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& x, std::int64_t height, std::int64_t width) {
  detail::require_rank(x.shape(), 3, "from_tokens");
  require(x.dim(1) == height * width, "from_tokens: " + std::to_string(x.dim(1)) +
                                          " tokens cannot form a " + std::to_string(height) +
                                          "x" + std::to_string(width) + " grid");
  const std::int64_t N = x.dim(0), HW = x.dim(1), C = x.dim(2);
  Tensor<T> out({N, C, height, width});
  swap_trailing(x.ptr(), N, HW, C, out.ptr(), false);
  auto xs = x.storage();
  record_op<T>("from_tokens", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    if (!gx.empty()) swap_trailing(gout.data(), N, C, HW, gx.data(), true);
  });
  return out;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  detail::require_rank(x.shape(), 3, "split_heads");
  require(heads >= 1 && x.dim(2) % heads == 0,
          "split_heads: dim " + std::to_string(x.dim(2)) + " not divisible by " +
              std::to_string(heads) + " heads");
  const std::int64_t N = x.dim(0), Tk = x.dim(1), d = x.dim(2), dh = d / heads;
  Tensor<T> out({N * heads, Tk, dh});
  // [N,T,h,dh] -> [N,h,T,dh]: per batch, swap axes T and h of blocks of dh.
  auto permute = [=](const T* in, T* o, bool forward, bool accumulate) {
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t t = 0; t < Tk; ++t) {
        for (std::int64_t h = 0; h < heads; ++h) {
          const std::int64_t a = ((n * Tk + t) * heads + h) * dh;  // [N,T,h,dh]
          const std::int64_t b = ((n * heads + h) * Tk + t) * dh;  // [N,h,T,dh]
          const T* src = in + (forward ? a : b);
          T* dst = o + (forward ? b : a);
          for (std::int64_t j = 0; j < dh; ++j) {
            if (accumulate) {
              dst[j] += src[j];
            } else {
              dst[j] = src[j];
            }
          }
        }
      }
    }
  };
  permute(x.ptr(), out.ptr(), true, false);
  auto xs = x.storage();
  record_op<T>("split_heads", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    if (!gx.empty()) permute(gout.data(), gx.data(), false, true);
  });
  return out;
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, int heads) {
  detail::require_rank(x.shape(), 3, "merge_heads");
  require(heads >= 1 && x.dim(0) % heads == 0, "merge_heads: batch not divisible by heads");
  const std::int64_t N = x.dim(0) / heads, Tk = x.dim(1), dh = x.dim(2);
  Tensor<T> out({N, Tk, heads * dh});
  auto permute = [=](const T* in, T* o, bool forward, bool accumulate) {
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t t = 0; t < Tk; ++t) {
          const std::int64_t a = ((n * heads + h) * Tk + t) * dh;  // [N,h,T,dh]
          const std::int64_t b = ((n * Tk + t) * heads + h) * dh;  // [N,T,h,dh]
          const T* src = in + (forward ? a : b);
          T* dst = o + (forward ? b : a);
          for (std::int64_t j = 0; j < dh; ++j) {
            if (accumulate) {
              dst[j] += src[j];
            } else {
              dst[j] = src[j];
            }
          }
        }
      }
    }
  };
  permute(x.ptr(), out.ptr(), true, false);
  auto xs = x.storage();
  record_op<T>("merge_heads", {x}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    if (!gx.empty()) permute(gout.data(), gx.data(), false, true);
  });
  return out;
}

#define MUVIT_INSTANTIATE(T)                                                         \
  template Tensor<T> activation(const Tensor<T>&, Activation);                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                     \
  template Tensor<T> sum(const Tensor<T>&);                                          \
  template Tensor<T> mean(const Tensor<T>&);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                               \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> to_tokens(const Tensor<T>&);                                    \
  template Tensor<T> from_tokens(const Tensor<T>&, std::int64_t, std::int64_t);      \
  template Tensor<T> split_heads(const Tensor<T>&, int);                             \
  template Tensor<T> merge_heads(const Tensor<T>&, int);

MUVIT_INSTANTIATE(float)
MUVIT_INSTANTIATE(double)

}  // namespace muvit

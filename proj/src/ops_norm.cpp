#include <cmath>
#include <vector>

#include "kernels.hpp"
#include "muvit/ops.hpp"

namespace muvit {

using detail::require;

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      double momentum, double eps) {
  detail::require_rank(x.shape(), 4, "batchnorm2d");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto matches = [C](const Tensor<T>& t) {
    return t.defined() && t.ndim() == 1 && t.dim(0) == C;
  };
  require(matches(gamma) && matches(beta) && matches(running_mean) && matches(running_var),
          "batchnorm2d: parameters do not match " + std::to_string(C) + " channels");
  const std::int64_t count = N * HW;

  std::vector<T> mean(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
  if (training) {
    require(count > 0, "batchnorm2d: empty batch");
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x.ptr() + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) s += static_cast<double>(p[i]);
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x.ptr() + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
    }
  }

  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* p = x.ptr() + (n * C + c) * HW;
      T* h = xhat.ptr() + (n * C + c) * HW;
      T* o = out.ptr() + (n * C + c) * HW;
      const T m = mean[c], is = inv_std[c], g = gamma[c], b = beta[c];
      for (std::int64_t i = 0; i < HW; ++i) {
        h[i] = (p[i] - m) * is;
        o[i] = g * h[i] + b;
      }
    }
  }

  auto xs = x.storage();
  auto gs = gamma.storage();
  auto bs = beta.storage();
  auto hs = xhat.storage();
  record_op<T>("batchnorm2d", {x, gamma, beta}, out, [=](std::span<const T> gout) {
    auto gx = grad_target(xs);
    auto gg = grad_target(gs);
    auto gb = grad_target(bs);
    const T* h = hs->data.data();
    for (std::int64_t c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gh = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const std::int64_t off = (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          sum_g += static_cast<double>(gout[off + i]);
          sum_gh += static_cast<double>(gout[off + i]) * static_cast<double>(h[off + i]);
        }
      }
      if (!gg.empty()) gg[c] += static_cast<T>(sum_gh);
      if (!gb.empty()) gb[c] += static_cast<T>(sum_g);
      if (gx.empty()) continue;
      const T g = gs->data[c];
      const T is = inv_std[c];
      if (training) {
        // dx = g*is * (dy - mean(dy) - xhat * mean(dy*xhat))
        const T mg = static_cast<T>(sum_g / static_cast<double>(count));
        const T mgh = static_cast<T>(sum_gh / static_cast<double>(count));
        for (std::int64_t n = 0; n < N; ++n) {
          const std::int64_t off = (n * C + c) * HW;
          for (std::int64_t i = 0; i < HW; ++i) {
            gx[off + i] += g * is * (gout[off + i] - mg - h[off + i] * mgh);
          }
        }
      } else {
        for (std::int64_t n = 0; n < N; ++n) {
          const std::int64_t off = (n * C + c) * HW;
          for (std::int64_t i = 0; i < HW; ++i) gx[off + i] += g * is * gout[off + i];
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps) {
  require(x.ndim() >= 1, "layernorm: scalar input");
  const std::int64_t d = x.dim(-1);
  require(gamma.ndim() == 1 && gamma.dim(0) == d && beta.ndim() == 1 && beta.dim(0) == d,
          "layernorm: gamma/beta must have length " + std::to_string(d));
  const std::int64_t rows = d == 0 ? 0 : static_cast<std::int64_t>(x.numel()) / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* p = x.ptr() + r * d;
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += static_cast<double>(p[j]);
    const double mu = s / static_cast<double>(d);
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double t = static_cast<double>(p[j]) - mu;
      ss += t * t;
    }
    const T is = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + eps));
    inv_std[static_cast<std::size_t>(r)] = is;
    T* h = xhat.data() + r * d;
    T* o = out.ptr() + r * d;
    const T m = static_cast<T>(mu);
    for (std::int64_t j = 0; j < d; ++j) {
      h[j] = (p[j] - m) * is;
      o[j] = gamma[j] * h[j] + beta[j];
    }
  }

  auto xs = x.storage();
  auto gs = gamma.storage();
  auto bs = beta.storage();
  record_op<T>("layernorm", {x, gamma, beta}, out,
               [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const T> gout) {
                 auto gx = grad_target(xs);
                 auto gg = grad_target(gs);
                 auto gb = grad_target(bs);
                 const T* g = gs->data.data();
                 std::vector<T> dh(static_cast<std::size_t>(d));
                 for (std::int64_t r = 0; r < rows; ++r) {
                   const T* go = gout.data() + r * d;
                   const T* h = xhat.data() + r * d;
                   double mdh = 0.0, mdhh = 0.0;
                   for (std::int64_t j = 0; j < d; ++j) {
                     if (!gg.empty()) gg[j] += go[j] * h[j];
                     if (!gb.empty()) gb[j] += go[j];
                     dh[j] = go[j] * g[j];
                     mdh += static_cast<double>(dh[j]);
                     mdhh += static_cast<double>(dh[j]) * static_cast<double>(h[j]);
                   }
                   if (gx.empty()) continue;
                   const T a = static_cast<T>(mdh / static_cast<double>(d));
                   const T b = static_cast<T>(mdhh / static_cast<double>(d));
                   const T is = inv_std[static_cast<std::size_t>(r)];
                   T* gxr = gx.data() + r * d;
                   for (std::int64_t j = 0; j < d; ++j) gxr[j] += is * (dh[j] - a - h[j] * b);
                 }
               });
  return out;
}

template Tensor<float> batchnorm2d(const Tensor<float>&, const Tensor<float>&,
                                   const Tensor<float>&, Tensor<float>&, Tensor<float>&, bool,
                                   double, double);
template Tensor<double> batchnorm2d(const Tensor<double>&, const Tensor<double>&,
                                    const Tensor<double>&, Tensor<double>&, Tensor<double>&, bool,
                                    double, double);
template Tensor<float> layernorm(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                 double);
template Tensor<double> layernorm(const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&, double);

}  // namespace muvit

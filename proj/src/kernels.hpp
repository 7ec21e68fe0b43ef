#pragma once

// Internal helpers shared by the operator translation units.

#include <Eigen/Core>
#include <cstdint>
#include <string>

#include "muvit/tensor.hpp"

namespace muvit::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) +
                      " input, got " + shape_str(s));
  }
}

template <typename T>
Tensor<T> make_output(Shape shape) {
  return Tensor<T>(std::move(shape));
}

inline void count_macs(std::int64_t MacCounters::*field, std::int64_t n) {
  if (auto* c = active_mac_counters()) c->*field += n;
}

/// Unfolds one [C,H,W] image into [C*kh*kw, Ho*Wo] columns.
template <typename T>
void im2col(const T* img, std::int64_t C, std::int64_t H, std::int64_t W, int kh, int kw,
            int stride, int pad, std::int64_t Ho, std::int64_t Wo, T* cols) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = cols + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          T* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            for (std::int64_t ox = 0; ox < Wo; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = img + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds columns back into [C,H,W].
template <typename T>
void col2im(const T* cols, std::int64_t C, std::int64_t H, std::int64_t W, int kh, int kw,
            int stride, int pad, std::int64_t Ho, std::int64_t Wo, T* img) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + oy * Wo;
          T* dst = img + (c * H + iy) * W;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace muvit::detail

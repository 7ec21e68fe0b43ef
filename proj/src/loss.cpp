#include "muvit/loss.hpp"

#include <algorithm>
#include <cmath>

namespace muvit {

template <typename T>
LossTerms<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& target, double smooth) {
  if (logits.shape() != target.shape()) {
    throw UsageError("seg_loss: logits " + shape_str(logits.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  if (logits.ndim() < 2) throw UsageError("seg_loss: expected [N,C,...] logits");
  for (T y : target.data()) {
    if (y != T(0) && y != T(1)) throw UsageError("seg_loss: target values must be 0 or 1");
  }
  const std::size_t n = logits.numel();
  if (n == 0) throw UsageError("seg_loss: empty input");
  const std::size_t groups = static_cast<std::size_t>(logits.dim(0) * logits.dim(1));
  const std::size_t per_group = n / groups;

  std::vector<double> prob(n);
  for (std::size_t i = 0; i < n; ++i) prob[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));

  double bce_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(prob[i], kProbClamp, 1.0 - kProbClamp);
    const double y = target[i];
    bce_sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  const double bce = bce_sum / static_cast<double>(n);
  if (auto* trace = active_branch_trace()) {
    for (std::size_t i = 0; i < n; ++i) {
      if (prob[i] < kProbClamp || prob[i] > 1.0 - kProbClamp) trace->mix(i);
    }
  }

  std::vector<double> inter(groups, 0.0), denom(groups, 0.0);
  double dice_sum = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = g * per_group; i < (g + 1) * per_group; ++i) {
      inter[g] += prob[i] * target[i];
      denom[g] += prob[i] + target[i];
    }
    dice_sum += 1.0 - (2.0 * inter[g] + smooth) / (denom[g] + smooth);
  }
  const double dice = dice_sum / static_cast<double>(groups);

  LossTerms<T> out;
  out.bce = bce;
  out.dice = dice;
  out.total = Tensor<T>::scalar(static_cast<T>(0.5 * bce + dice));

  auto ls = logits.storage();
  auto ts = target.storage();
  record_op<T>("seg_loss", {logits}, out.total,
               [=, prob = std::move(prob), inter = std::move(inter), denom = std::move(denom)](
                   std::span<const T> gout) {
                 auto gx = grad_target(ls);
                 if (gx.empty()) return;
                 const double up = gout[0];
                 const double bce_scale = 0.5 / static_cast<double>(n);
                 const double dice_scale = 1.0 / static_cast<double>(groups);
                 for (std::size_t g = 0; g < groups; ++g) {
                   const double num = 2.0 * inter[g] + smooth;
                   const double den = denom[g] + smooth;
                   for (std::size_t i = g * per_group; i < (g + 1) * per_group; ++i) {
                     const double p = prob[i];
                     const double y = ts->data[i];
                     const double dsig = p * (1.0 - p);
                     // Clamping flattens BCE outside the admissible band.
                     const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
                     const double d_bce = clamped ? 0.0 : (p - y);
                     const double d_dice = -(2.0 * y * den - num) / (den * den) * dsig;
                     gx[i] += static_cast<T>(up * (bce_scale * d_bce + dice_scale * d_dice));
                   }
                 }
               });
  return out;
}

template LossTerms<float> seg_loss(const Tensor<float>&, const Tensor<float>&, double);
template LossTerms<double> seg_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace muvit

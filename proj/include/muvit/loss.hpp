#pragma once

#include "muvit/tensor.hpp"

namespace muvit {

inline constexpr double kDiceSmooth = 1.0;
inline constexpr double kProbClamp = 1e-7;

template <typename T>
struct LossTerms {
  Tensor<T> total;  // scalar, differentiable w.r.t. the logits
  double bce = 0.0;
  double dice = 0.0;
};

/// 0.5 * BCE + Dice on per-channel sigmoid probabilities.
///
/// BCE is the mean over all elements with probabilities clamped to
/// [1e-7, 1 - 1e-7]. Dice is 1 - (2·Σŷy + ε)/(Σŷ + Σy + ε), computed per
/// sample and channel and then averaged. `target` must hold only 0 and 1.
template <typename T>
LossTerms<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& target, double smooth = kDiceSmooth);

}  // namespace muvit

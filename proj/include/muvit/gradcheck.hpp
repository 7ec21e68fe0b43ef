#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "muvit/tensor.hpp"

namespace muvit {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<input name>[<flat index>]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;  // elements skipped for crossing a branch
  std::vector<std::string> unverified;  // inputs with no smooth element checked
};

struct GradcheckOptions {
  double eps = 1e-4;
  /// Denominator floor as a fraction of the largest analytic gradient.
  double floor_ratio = 1e-5;
  std::size_t max_per_input = 0;  // 0 checks every element
  std::uint64_t seed = 0;
  /// Skips elements whose stencil points take different discrete branches
  /// (BranchTrace) than the unperturbed input, after retrying with the step
  /// scaled by 0.3 up to max_shrinks times.
  bool skip_nonsmooth = false;
  int max_shrinks = 8;
  std::size_t max_attempts_per_input = 64;
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

/// Compares reverse-mode gradients of `loss_fn` w.r.t. every named input
/// against a fourth-order central difference. The error per element is
/// |analytic - numeric| / max(floor, |analytic| + |numeric|) with floor =
/// floor_ratio * (largest analytic gradient over all inputs).
GradcheckResult gradcheck(const std::function<Tensor<double>()>& loss_fn,
                          const std::vector<NamedTensor>& inputs, const GradcheckOptions& options = {});

/// sum(out * R) for a fixed pseudo-random R of out's shape; turns any output
/// into a scalar with generic (non-degenerate) upstream gradients.
Tensor<double> random_projection(const Tensor<double>& out, std::uint64_t seed);

}  // namespace muvit

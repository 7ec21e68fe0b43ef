#pragma once

// Parameter and multiply-accumulate accounting. The analytic model walks the
// configuration only; the enumerated count walks the tensors of a built
// model; the instrumented count runs a forward pass with MAC counters on.

#include <cstdint>
#include <string>
#include <vector>

#include "muvit/model.hpp"

namespace muvit {

enum class CostKind { conv, conv_transpose, linear, attention_scores, attention_values, elementwise, parameter };

std::string to_string(CostKind k);

struct CostRow {
  std::string layer;
  CostKind kind = CostKind::elementwise;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  // Geometry the closed forms were evaluated at (0 when not applicable).
  std::int64_t h = 0, w = 0, d_in = 0, d_out = 0, k = 0, tokens = 0;
};

struct CostReport {
  std::vector<CostRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  std::int64_t batch = 1;
  std::int64_t input_size = 0;

  double flops() const { return 2.0 * static_cast<double>(total_macs); }
  double gflops() const { return flops() / 1e9; }
  std::int64_t macs_of(CostKind k) const;
  /// Parameters of every row whose layer name starts with `prefix`.
  std::int64_t params_under(const std::string& prefix) const;
};

// Closed forms.

/// h·w·d_i·d_j·k², a dense k x k convolution producing an h x w map.
std::int64_t conv_macs(std::int64_t h, std::int64_t w, std::int64_t d_in, std::int64_t d_out, std::int64_t k);

/// h·w·d·(k² + 2·d), one depthwise k x k plus two d -> d pointwise convs.
std::int64_t convutr_macs(std::int64_t h, std::int64_t w, std::int64_t d, std::int64_t k);

/// T²·d for Q·Kᵀ plus T²·d for the weighted sum of values.
std::int64_t attention_quadratic_macs(std::int64_t tokens, std::int64_t d);

/// Quadratic terms plus the four d x d projections, 4·T·d².
std::int64_t attention_macs(std::int64_t tokens, std::int64_t d);

/// (N/p²)² / N² = 1/p⁴. Throws ConfigError unless p² divides N.
double attention_cost_ratio(std::int64_t tokens, int p);

/// Per-layer analytic rows for a forward pass at batch size `batch`.
/// Norms, activations and resampling are charged one MAC per input element.
CostReport count_flops(const ModelConfig& cfg, std::int64_t batch = 1);

/// One row per state tensor of `model` (buffers listed with 0 params),
/// checked against the analytic count layer by layer. Throws
/// VerificationError on any disagreement.
template <typename T>
CostReport count_params(Model<T>& model);

/// Runs one eval-mode forward on zeros and returns what the kernels counted.
template <typename T>
MacCounters instrumented_macs(Model<T>& model, std::int64_t batch = 1);

extern template CostReport count_params(Model<float>&);
extern template CostReport count_params(Model<double>&);
extern template MacCounters instrumented_macs(Model<float>&, std::int64_t);
extern template MacCounters instrumented_macs(Model<double>&, std::int64_t);

}  // namespace muvit

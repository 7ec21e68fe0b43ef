#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muvit/data.hpp"
#include "muvit/model.hpp"

namespace muvit {

inline constexpr double kDefaultThreshold = 0.5;

/// Set sizes for one predicted/ground-truth pair.
struct OverlapCounts {
  std::int64_t intersection = 0;
  std::int64_t predicted = 0;
  std::int64_t truth = 0;

  std::int64_t union_size() const { return predicted + truth - intersection; }
  /// |P∩G|/|P∪G|, 1 when both sets are empty.
  double iou() const;
  /// 2|P∩G|/(|P|+|G|), 1 when both sets are empty.
  double f1() const;
};

OverlapCounts overlap(const std::vector<bool>& pred, const std::vector<bool>& truth);

struct SampleMetrics {
  std::string id;
  OverlapCounts counts;
  double iou = 0.0;
  double f1 = 0.0;
};

struct EvalResult {
  std::vector<SampleMetrics> samples;
  double mean_iou = 0.0;
  double mean_f1 = 0.0;
  double threshold = kDefaultThreshold;
};

/// Binarizes sigmoid(logits) >= threshold and scores each sample of the
/// batch against `truth` (same shape, values 0/1).
template <typename T>
EvalResult segmentation_metrics(const Tensor<T>& logits, const Tensor<T>& truth,
                                double threshold = kDefaultThreshold);

/// Eval-mode pass over `data` in order, in batches; means are over samples.
EvalResult evaluate(Model<float>& model, const Dataset& data, int batch = 8,
                    double threshold = kDefaultThreshold);

}  // namespace muvit

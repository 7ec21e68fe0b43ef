#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "muvit/data.hpp"
#include "muvit/model.hpp"
#include "muvit/optim.hpp"

namespace muvit {

struct TrainOptions {
  int epochs = 30;
  int batch = 8;
  ScheduleKind schedule = ScheduleKind::poly;
  double lr0 = 0.01;
  int warmup_epochs = 0;
  SgdOptions sgd;
  std::uint64_t seed = 0;
  bool augment = true;
  double threshold = 0.5;
  std::string log_path;  // JSON lines; empty disables logging
};

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double bce = 0.0;
  double dice = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's steps
  double val_iou = -1.0;    // -1 without a validation set
  double val_f1 = -1.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_iou = -1.0;
  std::vector<std::pair<std::string, Tensor<float>>> best_state;  // empty without validation
};

/// Minibatch SGD over `train` with a seeded shuffle each epoch. After every
/// epoch the model is scored on `val` (when non-empty) and the best state by
/// IoU is kept. A non-finite loss or gradient aborts with NumericError naming
/// the first layer whose output (or parameter whose gradient) went bad.
TrainResult train_loop(Model<float>& model, Sgd<float>& optim, const Dataset& train, const Dataset& val,
                       const TrainOptions& opts);

/// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int epoch);

}  // namespace muvit

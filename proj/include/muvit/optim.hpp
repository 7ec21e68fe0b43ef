#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "muvit/tensor.hpp"

namespace muvit {

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// g' = g + wd·p;  v = μ·v + g';  p = p - lr·v.
template <typename T>
class Sgd {
 public:
  using Named = std::vector<std::pair<std::string, Tensor<T>>>;

  Sgd(Named params, SgdOptions opts = {});

  /// Throws UsageError naming the first parameter without a gradient.
  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  const SgdOptions& options() const { return opts_; }

  /// Momentum buffers named "optim/<param>".
  Named state() const;
  void load_state(const Named& buffers, std::int64_t steps);

 private:
  Named params_;
  std::vector<Tensor<T>> velocity_;
  SgdOptions opts_;
  std::int64_t steps_ = 0;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

enum class ScheduleKind { poly, warmup_cosine };

std::string to_string(ScheduleKind k);
ScheduleKind parse_schedule(const std::string& s);

inline constexpr double kPolyPower = 0.9;

/// poly:          lr0·(1 - t/T)^power
/// warmup_cosine: lr0·t/W for t < W, then 0.5·lr0·(1 + cos(π·(t-W)/(T-W)))
double lr_at(ScheduleKind kind, std::int64_t t, std::int64_t total, double lr0, std::int64_t warmup = 0,
             double power = kPolyPower);

}  // namespace muvit

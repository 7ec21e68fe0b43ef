#pragma once

// Run configuration document and the binary checkpoint format:
//
//   "MUVT" | version u32 | config length u64 | config JSON |
//   tensor count u64 | per tensor: name length u16, name, dtype u8,
//   ndim u8, dims u64 each, raw values
//
// All integers and values little-endian.

#include <cstdint>
#include <string>
#include <vector>

#include "muvit/model.hpp"
#include "muvit/optim.hpp"

namespace muvit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct RunConfig {
  ModelConfig model;
  std::uint64_t seed = 0;
  ScheduleKind schedule = ScheduleKind::poly;
  double lr0 = 0.01;
  int epochs = 30;
  int batch = 8;
  int warmup_epochs = 0;
};

/// Compact JSON with a fixed key order.
std::string config_to_json(const RunConfig& cfg);

/// Absent keys keep their defaults; unknown keys and ill-typed values are
/// rejected. Throws ParseError for malformed JSON and ConfigError otherwise.
RunConfig config_from_json(const std::string& text);

RunConfig load_config_file(const std::string& path);

struct StoredTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;  // widened; narrowing back to f32 is exact
};

struct Checkpoint {
  RunConfig config;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
  bool has_optimizer() const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Model state (parameters and running statistics, in model order) and, when
/// given, the optimizer's momentum buffers plus "optim/step".
template <typename T>
Checkpoint make_checkpoint(const RunConfig& cfg, Model<T>& model, const Sgd<T>* optim = nullptr);

/// Copies model state; errors name the first offending tensor.
template <typename T>
void restore_model(const Checkpoint& ckpt, Model<T>& model);

template <typename T>
void restore_optimizer(const Checkpoint& ckpt, Sgd<T>& optim);

}  // namespace muvit

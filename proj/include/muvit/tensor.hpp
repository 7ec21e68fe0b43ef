#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to its storage (copying a Tensor aliases it);
// use clone() for an independent copy. Operations record a node on the
// thread's active Graph only when a GraphScope is open and at least one input
// requires a gradient.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "muvit/errors.hpp"

namespace muvit {

using Shape = std::vector<std::int64_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// 64-byte aligned allocation. Vectorized kernels peel a different number of
/// leading elements depending on buffer alignment, which changes summation
/// order; fixing the alignment keeps results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorStorage {
  Shape shape;
  AlignedVector<T> data;
  AlignedVector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* ptr() { return s_->data.data(); }
  const T* ptr() const { return s_->data.data(); }
  T item() const;
  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return s_->is_leaf; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> mutable_grad();  // allocates zeros on first use
  void zero_grad();

  /// Deep copy of the values; the copy is a detached leaf.
  Tensor clone() const;

  bool all_finite() const;

  const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }
  explicit Tensor(std::shared_ptr<TensorStorage<T>> s) : s_(std::move(s)) {}

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

/// Recorded computation. Nodes are appended in execution order, which is a
/// topological order; backward() replays them in reverse.
template <typename T>
class Graph {
 public:
  using StoragePtr = std::shared_ptr<TensorStorage<T>>;
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  struct Node {
    std::string_view kind;
    std::vector<StoragePtr> inputs;
    StoragePtr output;
    BackwardFn backward;
  };

  void record(std::string_view kind, std::vector<StoragePtr> inputs, StoragePtr output,
              BackwardFn backward);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every leaf that requires
  /// a gradient. Intermediate gradients are reset first, so replaying the same
  /// graph twice doubles leaf gradients and nothing else.
  void backward(const Tensor<T>& loss);

 private:
  std::vector<Node> nodes_;
};

/// Makes `graph` the recording target for the calling thread.
template <typename T>
class GraphScope {
 public:
  explicit GraphScope(Graph<T>& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph<T>* previous_;
};

/// Suspends recording for the calling thread.
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph<T>* previous_;
};

template <typename T>
Graph<T>* active_graph();

/// Appends a node when recording is on and some input needs a gradient; marks
/// `out` as a non-leaf that requires grad. Returns whether a node was added.
template <typename T>
bool record_op(std::string_view kind, const std::vector<Tensor<T>>& inputs, Tensor<T>& out,
               typename Graph<T>::BackwardFn backward);

/// Gradient buffer of `t` if it takes part in differentiation, else empty.
template <typename T>
std::span<T> grad_target(const std::shared_ptr<TensorStorage<T>>& t);

// Multiply-accumulate counters, used to cross-check the analytic cost model
// against what the kernels actually execute.
struct MacCounters {
  std::int64_t conv = 0;
  std::int64_t conv_transpose = 0;
  std::int64_t linear = 0;
  std::int64_t attention_scores = 0;  // Q·Kᵀ
  std::int64_t attention_values = 0;  // softmax(..)·V
  std::int64_t total() const {
    return conv + conv_transpose + linear + attention_scores + attention_values;
  }
};

MacCounters* active_mac_counters();

class MacCountScope {
 public:
  explicit MacCountScope(MacCounters& counters);
  ~MacCountScope();
  MacCountScope(const MacCountScope&) = delete;
  MacCountScope& operator=(const MacCountScope&) = delete;

 private:
  MacCounters* previous_;
};

// Fingerprint of the discrete choices a forward pass made (ReLU signs,
// max-pool winners, loss clamps). Two evaluations with equal fingerprints
// lie on the same smooth piece of a piecewise-smooth function.
struct BranchTrace {
  std::uint64_t hash = 0x9e3779b97f4a7c15ULL;
  void mix(std::uint64_t v) {
    hash ^= v + 0x9e3779b97f4a7c15ULL + (hash << 6) + (hash >> 2);
  }
};

BranchTrace* active_branch_trace();

class BranchTraceScope {
 public:
  explicit BranchTraceScope(BranchTrace& trace);
  ~BranchTraceScope();
  BranchTraceScope(const BranchTraceScope&) = delete;
  BranchTraceScope& operator=(const BranchTraceScope&) = delete;

 private:
  BranchTrace* previous_;
};

}  // namespace muvit

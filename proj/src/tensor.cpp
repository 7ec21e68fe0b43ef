#include "muvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace muvit {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ConfigError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : s_(std::make_shared<TensorStorage<T>>()) {
  const auto n = shape_numel(shape);
  s_->shape = std::move(shape);
  s_->data.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<TensorStorage<T>>()) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ConfigError("tensor shape " + shape_str(shape) + " does not match " +
                      std::to_string(values.size()) + " values");
  }
  s_->shape = std::move(shape);
  s_->data.assign(values.begin(), values.end());
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) throw UsageError("axis out of range for shape " + shape_str(shape()));
  return s_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  s_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  return s_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(s_->shape);
  out.s_->data = s_->data;
  return out;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(s_->data.begin(), s_->data.end(), [](T v) { return std::isfinite(v); });
}

namespace {

template <typename T>
Graph<T>*& graph_slot() {
  thread_local Graph<T>* slot = nullptr;
  return slot;
}

thread_local MacCounters* mac_slot = nullptr;
thread_local BranchTrace* trace_slot = nullptr;

}  // namespace

template <typename T>
Graph<T>* active_graph() {
  return graph_slot<T>();
}

template <typename T>
GraphScope<T>::GraphScope(Graph<T>& graph) : previous_(graph_slot<T>()) {
  graph_slot<T>() = &graph;
}

template <typename T>
GraphScope<T>::~GraphScope() {
  graph_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(graph_slot<T>()) {
  graph_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  graph_slot<T>() = previous_;
}

template <typename T>
void Graph<T>::record(std::string_view kind, std::vector<StoragePtr> inputs, StoragePtr output,
                      BackwardFn backward) {
  nodes_.push_back(Node{kind, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss");
  }
  const auto& root = loss.storage();
  if (!root->requires_grad) throw UsageError("backward() on a loss that does not require grad");

  for (auto& node : nodes_) {
    auto& g = node.output->grad;
    g.assign(node.output->data.size(), T(0));
  }
  if (root->is_leaf) {
    if (root->grad.empty()) root->grad.assign(1, T(0));
    root->grad[0] += T(1);
    return;
  }
  root->grad[0] = T(1);

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward(std::span<const T>(it->output->grad));
  }
}

template <typename T>
bool record_op(std::string_view kind, const std::vector<Tensor<T>>& inputs, Tensor<T>& out,
               typename Graph<T>::BackwardFn backward) {
  Graph<T>* graph = graph_slot<T>();
  if (graph == nullptr) return false;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) {
    return t.defined() && t.requires_grad();
  });
  if (!any) return false;
  std::vector<typename Graph<T>::StoragePtr> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (t.defined()) ptrs.push_back(t.storage());
  }
  out.storage()->requires_grad = true;
  out.storage()->is_leaf = false;
  graph->record(kind, std::move(ptrs), out.storage(), std::move(backward));
  return true;
}

template <typename T>
std::span<T> grad_target(const std::shared_ptr<TensorStorage<T>>& t) {
  if (!t || !t->requires_grad) return {};
  if (t->grad.empty()) t->grad.assign(t->data.size(), T(0));
  return t->grad;
}

MacCounters* active_mac_counters() { return mac_slot; }

MacCountScope::MacCountScope(MacCounters& counters) : previous_(mac_slot) { mac_slot = &counters; }

MacCountScope::~MacCountScope() { mac_slot = previous_; }

BranchTrace* active_branch_trace() { return trace_slot; }

BranchTraceScope::BranchTraceScope(BranchTrace& trace) : previous_(trace_slot) { trace_slot = &trace; }

BranchTraceScope::~BranchTraceScope() { trace_slot = previous_; }

#define MUVIT_INSTANTIATE(T)                                                                    \
  template class Tensor<T>;                                                                     \
  template class Graph<T>;                                                                      \
  template class GraphScope<T>;                                                                 \
  template class NoGradScope<T>;                                                                \
  template Graph<T>* active_graph<T>();                                                         \
  template bool record_op<T>(std::string_view, const std::vector<Tensor<T>>&, Tensor<T>&,       \
                             typename Graph<T>::BackwardFn);                                    \
  template std::span<T> grad_target<T>(const std::shared_ptr<TensorStorage<T>>&);

MUVIT_INSTANTIATE(float)
MUVIT_INSTANTIATE(double)

}  // namespace muvit

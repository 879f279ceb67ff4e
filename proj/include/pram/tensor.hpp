#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace pram {

/// Raised when operand shapes do not fit an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by backward() when there is nothing to differentiate.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One vertex of the compute graph. Nodes are created in execution order and
/// carry a monotonically increasing sequence number, so sorting by sequence
/// number is a valid topological order.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::uint64_t seq = detail::next_sequence();

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    if (numel(shape) != values.size())
      throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  /// Builds an operation output. Gradient tracking is enabled when any parent
  /// requires it; otherwise the backward function and parents are dropped.
  static Tensor from_op(std::string op, Shape shape, std::vector<T> values,
                        std::vector<Tensor> parents, std::function<void(Node<T>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    out.node_->op = std::move(op);
    bool tracked = detail::grad_mode() && std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
    if (tracked) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, cut off from the graph.
  Tensor detach() const { return Tensor(shape(), values(), false); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  bool all_finite() const {
    return std::all_of(values().begin(), values().end(), [](T v) { return std::isfinite(v); });
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {
template <typename T>
std::vector<Node<T>*> reachable_in_reverse_order(const Tensor<T>& root) {
  std::vector<Node<T>*> nodes;
  std::vector<Node<T>*> stack{&root.node()};
  std::unordered_set<const Node<T>*> seen{&root.node()};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
  return nodes;
}
}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls until cleared; intermediate gradients are reset on every call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.size() != 1)
    throw GraphError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw GraphError("backward: loss has no recorded graph (no input requires grad)");

  auto order = detail::reachable_in_reverse_order(loss);
  for (Node<T>* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T{0});
  loss.node().ensure_grad()[0] += T{1};
  for (Node<T>* n : order)
    if (!n->is_leaf()) n->backward_fn(*n);
}

/// Topologically ordered (forward order) list of the nodes feeding `root`.
template <typename T>
std::vector<const Node<T>*> graph_nodes(const Tensor<T>& root) {
  std::vector<const Node<T>*> out;
  std::vector<const Node<T>*> stack{&root.node()};
  std::unordered_set<const Node<T>*> seen{&root.node()};
  while (!stack.empty()) {
    const Node<T>* n = stack.back();
    stack.pop_back();
    out.push_back(n);
    for (auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(out.begin(), out.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });
  return out;
}

}  // namespace pram

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ptee/errors.hpp"

namespace ptee::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) {
    if (d <= 0) throw Error("tensor", "shape dimension must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
inline std::uint64_t next_seq() {
  static std::uint64_t counter = 0;
  return ++counter;
}
inline int& no_grad_depth() {
  static thread_local int depth = 0;
  return depth;
}
}  // namespace detail

// While a NoGradGuard is alive, newly created results record no backward
// functions and never require gradients.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

template <class S>
class TensorT;

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until a backward pass first touches it
  bool requires_grad = false;
  std::vector<TensorT<S>> parents;
  std::function<void(TensorNode<S>&)> backward_fn;  // null on leaves
  std::uint64_t seq = 0;
  bool consumed = false;  // flips once backward has run through this node

  void accumulate(std::span<const S> contribution) {
    if (grad.empty()) grad.assign(values.size(), S(0));
    for (std::size_t i = 0; i < contribution.size(); ++i) grad[i] += contribution[i];
  }
};

// Shared-node tensor handle. Copies alias the same storage; the recorded
// graph hangs off result nodes via `parents`. Scalars are shape {1}.
template <class S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape) {
    auto n = std::make_shared<TensorNode<S>>();
    n->values.assign(static_cast<std::size_t>(shape_numel(shape)), S(0));
    n->shape = std::move(shape);
    n->seq = detail::next_seq();
    return TensorT(std::move(n));
  }

  static TensorT full(Shape shape, S value) {
    TensorT t = zeros(std::move(shape));
    std::fill(t.node().values.begin(), t.node().values.end(), value);
    return t;
  }

  static TensorT from_values(Shape shape, std::vector<S> values) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
      throw Error("tensor", "value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->seq = detail::next_seq();
    return TensorT(std::move(n));
  }

  static TensorT scalar(S value) { return full({1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node().values.size()); }
  std::span<const S> values() const { return node().values; }
  std::span<S> values_mut() { return node().values; }

  S item() const {
    if (numel() != 1) throw Error("tensor", "item() on tensor of shape " + shape_str(shape()));
    return node().values[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool b) { node().requires_grad = b; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const S> grad() const {
    if (!has_grad()) throw Error("tensor", "gradient not populated");
    return node().grad;
  }
  void zero_grad() { node().grad.clear(); }

  TensorNode<S>& node() const {
    if (!node_) throw Error("tensor", "use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<TensorNode<S>>& node_ptr() const { return node_; }

  bool same_node(const TensorT& other) const { return node_ == other.node_; }

 private:
  explicit TensorT(std::shared_ptr<TensorNode<S>> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode<S>> node_;

  template <class T>
  friend TensorT<T> make_result(Shape, std::vector<T>, std::vector<TensorT<T>>,
                                std::function<void(TensorNode<T>&)>);
};

// Factory used by every op: wires parents and the backward closure only when
// gradients are both enabled and needed, so frozen/constant subgraphs record
// nothing.
template <class S>
TensorT<S> make_result(Shape shape, std::vector<S> values, std::vector<TensorT<S>> parents,
                       std::function<void(TensorNode<S>&)> backward_fn) {
  auto n = std::make_shared<TensorNode<S>>();
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw Error("tensor", "op produced " + std::to_string(values.size()) +
                              " values for shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->seq = detail::next_seq();
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents)
      if (p.requires_grad()) needs = true;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return TensorT<S>(std::move(n));
}

// Reverse-mode sweep from a scalar loss. The recording is single-use: the
// graph is released as it is consumed and a second call is rejected.
template <class S>
void backward(const TensorT<S>& loss) {
  if (loss.numel() != 1) throw Error("autograd", "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  TensorNode<S>& root = loss.node();
  if (root.consumed) throw Error("autograd", "backward called twice on the same recording");
  if (!root.requires_grad) {
    warn("backward: loss does not depend on any trainable tensor; no gradients populated");
    return;
  }

  // Collect the reachable recording. seq strictly increases with creation
  // order, so descending seq is a valid reverse topological order. `owners`
  // keeps every node alive for the whole sweep: clearing a child's parent
  // links below may otherwise free a node still waiting for its turn.
  std::vector<std::shared_ptr<TensorNode<S>>> owners;
  std::vector<TensorNode<S>*> nodes;
  std::vector<std::shared_ptr<TensorNode<S>>> stack{loss.node_ptr()};
  while (!stack.empty()) {
    std::shared_ptr<TensorNode<S>> sp = std::move(stack.back());
    stack.pop_back();
    TensorNode<S>* n = sp.get();
    if (n->consumed) throw Error("autograd", "recording was already consumed by an earlier backward");
    if (std::find(nodes.begin(), nodes.end(), n) != nodes.end()) continue;
    nodes.push_back(n);
    owners.push_back(std::move(sp));
    for (const auto& p : n->parents)
      if (p.requires_grad()) stack.push_back(p.node_ptr());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorNode<S>* a, const TensorNode<S>* b) { return a->seq > b->seq; });

  root.grad.assign(1, S(1));
  // Leaves keep accumulating across recordings; only interior nodes are
  // single-use (their closures and parent links are dropped as we go).
  for (TensorNode<S>* n : nodes) {
    if (!n->backward_fn) continue;
    if (!n->grad.empty()) n->backward_fn(*n);
    n->consumed = true;
    n->backward_fn = nullptr;
    n->parents.clear();
  }
}

using Tensor = TensorT<float>;

}  // namespace ptee::nn

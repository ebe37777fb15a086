#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sepprune/error.hpp"

namespace sepprune {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
class Tape;

// Lightweight handle into a Tape. Copying a Tensor never copies data.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Tape<T>* tape() const { return tape_; }

  const Shape& shape() const { return tape_->node(id_).shape; }
  std::size_t numel() const { return tape_->node(id_).values.size(); }
  std::span<const T> values() const { return tape_->node(id_).values; }
  std::span<T> values_mut() { return tape_->node(id_).values; }
  bool needs_grad() const { return tape_->node(id_).needs_grad; }

  // Empty span if no gradient has been accumulated yet.
  std::span<const T> grad() const { return tape_->node(id_).grad; }
  bool has_grad() const { return !tape_->node(id_).grad.empty(); }

  T item() const {
    if (numel() != 1)
      throw InvalidArgumentError("item(): tensor is not scalar, shape " +
                                 shape_str(shape()));
    return values()[0];
  }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes own value/grad storage; recorded entries are
// replayed in exact reverse order by backward(). Single-threaded: a tape and
// its tensors must never be shared across threads.
template <class T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated lazily on first accumulation
    bool needs_grad = false;
  };

  struct Entry {
    const char* op;
    std::vector<int> inputs;
    int out;
    // Invoked with the tape and the output node id; accumulates input grads.
    std::function<void(Tape&, int)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // When false, ops compute values but record nothing (inference mode).
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  Tensor<T> leaf(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw InvalidArgumentError("leaf: shape " + shape_str(shape) +
                                 " does not match value count " +
                                 std::to_string(values.size()));
    nodes_.push_back(Node{std::move(shape), std::move(values), {}, requires_grad});
    return Tensor<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  Tensor<T> scalar(T v, bool requires_grad = false) {
    return leaf(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  Tensor<T> zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> v(shape_numel(shape), T(0));
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  // Op implementations call this with precomputed output values. The output
  // inherits needs_grad from its inputs; entries are recorded only when the
  // gradient can actually flow.
  Tensor<T> emit(const char* op, Shape out_shape, std::vector<T> out_values,
                 std::vector<int> inputs, std::function<void(Tape&, int)> backward) {
    check_finite(op, out_values);
    bool needs = false;
    for (int i : inputs) needs = needs || nodes_[i].needs_grad;
    nodes_.push_back(Node{std::move(out_shape), std::move(out_values), {}, needs});
    int out = static_cast<int>(nodes_.size()) - 1;
    if (recording_ && needs)
      entries_.push_back(Entry{op, std::move(inputs), out, std::move(backward)});
    return Tensor<T>(this, out);
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  // Gradient buffer for accumulation; zero-initialized on first touch.
  std::span<T> grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.values.size(), T(0));
    return n.grad;
  }

  // Accumulates d(loss)/d(leaf) for every leaf reachable from `loss`. Leaf
  // grads add to whatever is already present (call zero_grad between
  // independent passes); intermediate grads are per-pass scratch and reset
  // here so repeated calls double leaf grads rather than compounding.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw InvalidArgumentError("backward: loss must be scalar, got shape " +
                                 shape_str(loss.shape()));
    if (entries_.empty())
      throw InvalidArgumentError("backward: tape is empty");
    for (const Entry& e : entries_) {
      auto& g = nodes_[static_cast<std::size_t>(e.out)].grad;
      std::fill(g.begin(), g.end(), T(0));
    }
    grad_buffer(loss.id())[0] = T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (nodes_[static_cast<std::size_t>(it->out)].grad.empty()) continue;
      it->backward(*this, it->out);
      for (int in : it->inputs) {
        const Node& n = nodes_[static_cast<std::size_t>(in)];
        if (n.needs_grad && !n.grad.empty()) check_finite_grad(it->op, n.grad);
      }
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), T(0));
  }

  // Drops all nodes and entries, freeing saved activations. Idempotent.
  void clear() {
    nodes_.clear();
    entries_.clear();
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_entries() const { return entries_.size(); }

  static void check_finite(const char* op, const std::vector<T>& v) {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x)))
        throw NumericError(op, "non-finite value in forward output");
  }

 private:
  static void check_finite_grad(const char* op, const std::vector<T>& g) {
    for (T x : g)
      if (!std::isfinite(static_cast<double>(x)))
        throw NumericError(op, "non-finite value in gradient");
  }

  std::vector<Node> nodes_;
  std::vector<Entry> entries_;
  bool recording_ = true;
};

}  // namespace sepprune

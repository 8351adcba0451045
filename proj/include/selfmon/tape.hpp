#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "selfmon/params.hpp"
#include "selfmon/tensor.hpp"

namespace selfmon::num {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const;

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Append-only record of an eagerly evaluated computation. Nodes are created in
/// topological order; backward() walks them in reverse creation order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  explicit Tape(const ParameterSet* params) { bind(params); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Parameters fetched through param() resolve against this set.
  void bind(const ParameterSet* params);

  Var constant(Tensor value);
  /// Leaf that aliases `value`; the caller keeps it alive for the tape's lifetime.
  Var constant_ref(const Tensor& value);
  /// Leaf for parameter `index` of the bound set. One node per parameter per tape.
  Var param(std::size_t index);

  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward);

  const Tensor& value(std::uint32_t id) const;
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  /// Gradient accumulator of `id`, zero-initialized on first touch; null when the
  /// node does not lead to any trainable parameter.
  Tensor* grad_target(std::uint32_t id);
  const Tensor& grad(std::uint32_t id) const;

  /// Reverse sweep from a scalar root. Accumulators are reset first.
  void backward(Var root);
  /// Gradient of the last backward root with respect to `v` (zeros if unreached).
  Tensor gradient(Var v) const;
  /// Parameter gradients from the last backward, index-aligned with the bound set.
  GradientSet parameter_gradients() const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* alias = nullptr;
    BackwardFn backward;
    Tensor grad;
    bool grad_live = false;
    bool needs_grad = false;
    std::int32_t param_index = -1;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  const ParameterSet* params_ = nullptr;
  std::vector<std::int32_t> param_nodes_;
};

}  // namespace selfmon::num

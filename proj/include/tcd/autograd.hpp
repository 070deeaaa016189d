// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tcd/tensor.hpp"

namespace tcd::ag {

struct Node;
using BackwardFn = std::function<void(Node&)>;

/// One value in the dynamic tape. `backward_fn` reads `grad` and accumulates
/// into the parents that require gradients.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  /// Allocates a zero gradient of matching shape on first use.
  Tensor& ensure_grad();
  /// Gradient buffer of parent `i`, or nullptr when it does not need one.
  Tensor* parent_grad(std::size_t i);
  const Tensor& parent_value(std::size_t i) const { return parents[i]->value; }
};

/// Shared handle to a tape node. Copies alias the same node, which is how
/// parameters are updated in place by optimizers.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Empty tensor when no gradient has been accumulated.
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();
  const std::shared_ptr<Node>& node() const { return node_; }

  /// Reverse pass seeded with ones; the value must be a scalar.
  void backward() const;
  void backward(const Tensor& seed) const;
  /// Scalar value accessor.
  double item() const;

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a result node. When recording is off or no parent requires a
/// gradient the result is a constant and `fn` is dropped.
Var make_result(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

/// Constant (non-differentiable) wrapper.
inline Var constant(Tensor t) { return Var(std::move(t), false); }

}  // namespace tcd::ag

// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/autograd.hpp"

#include <algorithm>
#include <unordered_set>

#include "tcd/errors.hpp"

namespace tcd::ag {
namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Tensor* Node::parent_grad(std::size_t i) {
  Node& p = *parents[i];
  if (!p.requires_grad) return nullptr;
  return &p.ensure_grad();
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

double Var::item() const {
  if (value().size() != 1) throw ShapeError("item() on non-scalar of shape " + to_string(shape()));
  return value()[0];
}

void Var::backward() const {
  if (value().size() != 1) throw ShapeError("backward() without seed requires a scalar, got " + to_string(shape()));
  backward(Tensor(shape(), 1.0));
}

void Var::backward(const Tensor& seed) const {
  if (!node_->requires_grad) return;
  if (!seed.same_shape(value())) throw ShapeError("backward seed shape mismatch");

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Tensor& g = node_->ensure_grad();
  for (std::int64_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& v) { return v.defined() && v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

}  // namespace tcd::ag

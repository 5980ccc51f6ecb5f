/*
 * Copyright 2026 The osscl Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "osscl/nn/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "osscl/error.hpp"

namespace osscl::nn {

namespace {

#if defined(__GLIBC__)
// Activations are large and short-lived. Serving them from mmap means every
// op pays for fresh zero pages, so keep them on the heap instead.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<Node>()) {
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<double> Tensor::values() { return node_->value; }
std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor " + shape_string(shape()));
  return node_->value[0];
}

double& Tensor::at(std::size_t flat) { return node_->value.at(flat); }
double Tensor::at(std::size_t flat) const { return node_->value.at(flat); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

std::span<double> Tensor::grad() { return node_->ensure_grad(); }

std::span<const double> Tensor::grad() const { return node_->ensure_grad(); }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar, got " + shape_string(shape()));
  }
  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
  // Intermediate grads are only needed during the sweep.
  for (Node* node : order) {
    if (node->backward) std::vector<double>().swap(node->grad);
  }
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->value);
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(this->shape()) + " to " +
                     shape_string(shape));
  }
  return make_op_result(std::move(shape), node_->value, {*this}, [](Node& out) {
    auto& in = out.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < in.size(); ++i) in[i] += out.grad[i];
  });
}

Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace osscl::nn

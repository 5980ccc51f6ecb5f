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

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace osscl::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// One vertex of the reverse-mode graph. `backward` reads `grad` of this node
// and accumulates into the grads of `inputs`.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

// Shared handle to a dense row-major double tensor with optional gradient
// tracking. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;
  double& at(std::size_t flat);
  double at(std::size_t flat) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  // Gradient buffer; allocated with zeros on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  // Runs reverse-mode accumulation from this scalar.
  void backward() const;

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  // Same values viewed with a different shape; gradients flow through.
  Tensor reshape(Shape shape) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_op_result(Shape, std::vector<double>, std::vector<Tensor>,
                               std::function<void(Node&)>);
};

// Builds the output of an op. The backward closure is only attached when
// gradient recording is enabled and at least one input requires grad.
Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(Node&)> backward);

bool grad_enabled();

// Disables graph recording for its lifetime (evaluation, EMA updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace osscl::nn

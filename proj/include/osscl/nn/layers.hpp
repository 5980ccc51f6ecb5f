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

#include "osscl/nn/module.hpp"
#include "osscl/nn/ops.hpp"

namespace osscl::nn {

// Weights and biases use PyTorch's default fan-in scaling U(-1/sqrt(fan_in), +).
class Linear : public Module {
 public:
  Linear(std::size_t in, std::size_t out, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
};

class Conv1d : public Module {
 public:
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, Conv1dOptions opt, bool bias,
         Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
  Conv1dOptions options;
};

class Conv2d : public Module {
 public:
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel_h, std::size_t kernel_w,
         Conv2dOptions opt, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
  Conv2dOptions options;
};

class BatchNorm : public Module {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x);

  Tensor gamma, beta, running_mean, running_var;
  double momentum, eps;
};

class LayerNormChannels : public Module {
 public:
  explicit LayerNormChannels(std::size_t channels, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;

  Tensor gamma, beta;
  double eps;
};

class PReLU : public Module {
 public:
  explicit PReLU(std::size_t channels, double init = 0.25);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
};

}  // namespace osscl::nn

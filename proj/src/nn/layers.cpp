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

#include "osscl/nn/layers.hpp"

#include <cmath>

namespace osscl::nn {

namespace {
double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }
}  // namespace

Linear::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  const double bound = fan_in_bound(in);
  weight = register_parameter("weight", uniform_tensor({out, in}, bound, rng));
  if (with_bias) bias = register_parameter("bias", uniform_tensor({out}, bound, rng));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, Conv1dOptions opt,
               bool with_bias, Rng& rng)
    : options(opt) {
  const double bound = fan_in_bound(in * kernel);
  weight = register_parameter("weight", uniform_tensor({out, in, kernel}, bound, rng));
  if (with_bias) bias = register_parameter("bias", uniform_tensor({out}, bound, rng));
}

Tensor Conv1d::forward(const Tensor& x) const { return conv1d(x, weight, bias, options); }

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel_h, std::size_t kernel_w,
               Conv2dOptions opt, bool with_bias, Rng& rng)
    : options(opt) {
  const std::size_t in_per_group = in / opt.groups;
  const double bound = fan_in_bound(in_per_group * kernel_h * kernel_w);
  weight = register_parameter(
      "weight", uniform_tensor({out, in_per_group, kernel_h, kernel_w}, bound, rng));
  if (with_bias) bias = register_parameter("bias", uniform_tensor({out}, bound, rng));
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, bias, options); }

BatchNorm::BatchNorm(std::size_t channels, double momentum_, double eps_)
    : momentum(momentum_), eps(eps_) {
  gamma = register_parameter("gamma", Tensor({channels}, 1.0));
  beta = register_parameter("beta", Tensor({channels}, 0.0));
  running_mean = register_buffer("running_mean", Tensor({channels}, 0.0));
  running_var = register_buffer("running_var", Tensor({channels}, 1.0));
}

Tensor BatchNorm::forward(const Tensor& x) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training(), momentum, eps);
}

LayerNormChannels::LayerNormChannels(std::size_t channels, double eps_) : eps(eps_) {
  gamma = register_parameter("gamma", Tensor({channels}, 1.0));
  beta = register_parameter("beta", Tensor({channels}, 0.0));
}

Tensor LayerNormChannels::forward(const Tensor& x) const {
  return layer_norm_channels(x, gamma, beta, eps);
}

PReLU::PReLU(std::size_t channels, double init) {
  weight = register_parameter("weight", Tensor({channels}, init));
}

Tensor PReLU::forward(const Tensor& x) const { return prelu(x, weight); }

}  // namespace osscl::nn

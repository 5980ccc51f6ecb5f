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
#include <span>
#include <vector>

#include "osscl/nn/tensor.hpp"

namespace osscl::nn {

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
// Per-channel slope; channel axis is 1.
Tensor prelu(const Tensor& x, const Tensor& weight);

// a: MxK, b: KxN (or NxK when transpose_b).
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x: BxIn, weight: OutxIn, bias: Out or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                               std::size_t padding, std::size_t dilation = 1);

// x: NxCxL, weight: OxCxK, bias: O or undefined.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dOptions& opt);

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  // 1 (dense) or in_channels (depthwise, out_channels == in_channels).
  std::size_t groups = 1;
};

// x: NxCxHxW, weight: Ox(C/groups)xKhxKw, bias: O or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt);

// Normalizes over every axis except 1. Running statistics are updated in
// place when `training` is set (unbiased variance, PyTorch convention).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

// x: NxCxL normalized over C for each (n, l).
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           double eps = 1e-5);

// Non-overlapping max pooling along the last axis of NxCxL.
Tensor max_pool1d(const Tensor& x, std::size_t kernel);

// Bin i of output size O over length T spans [floor(i*T/O), ceil((i+1)*T/O)).
Tensor adaptive_max_pool1d(const Tensor& x, std::size_t output_size);

// Mean over the last axis; drops it.
Tensor mean_last_axis(const Tensor& x);

// Concatenates along axis 1; all other axes must agree.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Row-wise x / ||x||. Throws NumericError if a row norm is below min_norm.
Tensor l2_normalize_rows(const Tensor& x, double min_norm = 1e-12);

// Mean negative log-softmax at the label index of each row.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Row-wise log-softmax, no graph.
std::vector<double> log_softmax_row(std::span<const double> row);

}  // namespace osscl::nn

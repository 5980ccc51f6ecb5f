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
#include <random>
#include <span>
#include <vector>

#include "osscl/corpus.hpp"
#include "osscl/nn/tensor.hpp"

namespace osscl {

// One draw from Beta(alpha, alpha) via the ratio of two gamma variates.
// No symmetrization is applied.
double sample_lambda(std::mt19937_64& rng, double alpha = 0.5);

// Uniformly random permutation of [0, n).
std::vector<std::size_t> sample_permutation(std::size_t n, std::mt19937_64& rng);

struct MixedBatch {
  nn::Tensor waveforms;  // undefined when the source batch had none
  nn::Tensor logmels;
  std::vector<int> y_a;
  std::vector<int> y_b;  // y_b[i] == y_a[perm[i]]
  double lambda = 1.0;
  std::vector<std::size_t> perm;
};

// out[i] = lambda * x[i] + (1 - lambda) * x[perm[i]] along axis 0.
nn::Tensor mix_rows(const nn::Tensor& x, double lambda, std::span<const std::size_t> perm);

// Mixes waveforms and log-Mels with the same (lambda, perm). The batch is
// left untouched.
MixedBatch mixup_batch(const Batch& batch, double lambda, std::span<const std::size_t> perm);

}  // namespace osscl

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

#include "osscl/augment.hpp"

#include <algorithm>

#include "osscl/error.hpp"

namespace osscl {

double sample_lambda(std::mt19937_64& rng, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (;;) {
    const double a = gamma(rng);
    const double b = gamma(rng);
    if (a + b > 0.0) return a / (a + b);
  }
}

std::vector<std::size_t> sample_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

namespace {

void check_permutation(std::span<const std::size_t> perm, std::size_t n) {
  if (perm.size() != n) {
    throw InvalidArgument("mixup: permutation length " + std::to_string(perm.size()) +
                          " does not match batch size " + std::to_string(n));
  }
  std::vector<bool> seen(n, false);
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) throw InvalidArgument("mixup: not a permutation");
    seen[p] = true;
  }
}

}  // namespace

nn::Tensor mix_rows(const nn::Tensor& x, double lambda, std::span<const std::size_t> perm) {
  const std::size_t n = x.size(0);
  check_permutation(perm, n);
  const std::size_t row = x.numel() / n;
  auto src = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = src.data() + i * row;
    const double* b = src.data() + perm[i] * row;
    double* o = out.data() + i * row;
    for (std::size_t k = 0; k < row; ++k) o[k] = lambda * a[k] + (1.0 - lambda) * b[k];
  }
  return nn::Tensor(x.shape(), std::move(out));
}

MixedBatch mixup_batch(const Batch& batch, double lambda, std::span<const std::size_t> perm) {
  const std::size_t n = batch.size();
  if (n < 2) throw InvalidArgument("mixup needs a batch of at least 2 clips");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("mixup: lambda outside [0, 1]");
  check_permutation(perm, n);
  MixedBatch mixed;
  mixed.lambda = lambda;
  mixed.perm.assign(perm.begin(), perm.end());
  mixed.y_a = batch.labels;
  mixed.y_b.resize(n);
  for (std::size_t i = 0; i < n; ++i) mixed.y_b[i] = batch.labels[perm[i]];
  mixed.logmels = mix_rows(batch.logmels, lambda, perm);
  if (batch.waveforms.defined()) mixed.waveforms = mix_rows(batch.waveforms, lambda, perm);
  return mixed;
}

}  // namespace osscl

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
#include <vector>

#include "osscl/nn/tensor.hpp"

namespace osscl::nn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with decoupled weight decay. The learning rate is passed per step so
// the caller owns the schedule.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options);

  void zero_grad();
  void step(double lr);
  std::size_t step_count() const { return steps_; }
  const AdamWOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWOptions options_;
  std::size_t steps_ = 0;
};

}  // namespace osscl::nn

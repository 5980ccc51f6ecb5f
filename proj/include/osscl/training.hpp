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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "osscl/corpus.hpp"
#include "osscl/nn/module.hpp"

namespace osscl {

struct RunConfig;

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  double lr0 = 1e-4;
  double eta_min = 0.0;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.999;
  // Caps the decay at (1 + t) / (10 + t) so short runs are not dominated by
  // the initial weights.
  bool ema_warmup = true;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool operator==(const TrainConfig&) const = default;
};

// lr0 at step 0 falling to eta_min at total_steps along a half cosine.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double eta_min);

// Shadow copies of every trainable parameter. Buffers (batch-norm running
// statistics) are copied verbatim on each update.
struct EmaState {
  EmaState() = default;
  EmaState(const nn::Module& model, double decay, bool warmup = false);

  std::vector<nn::NamedTensor> params;
  std::vector<nn::NamedTensor> buffers;  // copied verbatim, not averaged
  double decay = 0.999;
  bool warmup = false;
  std::size_t updates = 0;
};

// shadow <- decay * shadow + (1 - decay) * param. Throws ShapeError when the
// parameter list does not mirror the shadow.
// shadow <- decay * shadow + (1 - decay) * param for every parameter.
void ema_update(EmaState& ema, const std::vector<nn::NamedTensor>& params, double decay);
// One post-step update from the live model, honouring the warmup cap, and a
// copy of the model buffers.
void ema_update(EmaState& ema, const nn::Module& model);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_supcon = 0.0;
  double loss_namix = 0.0;
  double wall_time = 0.0;  // seconds since training start
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<EpochRecord> log;
  std::size_t steps = 0;
  std::size_t ema_updates = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// One-stage training over every machine in the manifest. Writes
// `checkpoint.bin` and `train_log.jsonl` under out_dir.
TrainResult train(const DatasetManifest& manifest, const RunConfig& cfg,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

}  // namespace osscl

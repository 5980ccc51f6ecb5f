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
#include <filesystem>
#include <map>
#include <memory>
#include <vector>

#include "osscl/config.hpp"
#include "osscl/corpus.hpp"
#include "osscl/model.hpp"
#include "osscl/training.hpp"

namespace osscl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to rebuild a trained model: the resolved run config, the
// class map, and both the raw and the EMA weight sets.
struct Checkpoint {
  RunConfig config;  // config.model.num_classes matches class_map
  std::map<MachineKey, int> class_map;
  std::vector<nn::NamedTensor> raw_params;
  std::vector<nn::NamedTensor> raw_buffers;
  std::vector<nn::NamedTensor> ema_params;
  std::vector<nn::NamedTensor> ema_buffers;
  std::size_t steps = 0;
  std::size_t ema_updates = 0;
};

Checkpoint make_checkpoint(const OsSclModel& model, const EmaState& ema, const RunConfig& cfg,
                           const std::map<MachineKey, int>& class_map, std::size_t steps);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds the model described by the checkpoint, loads the chosen weight set
// and switches it to evaluation mode.
std::unique_ptr<OsSclModel> instantiate(const Checkpoint& ckpt, WeightSet weights);

// Copies values by name; shapes and names must match exactly.
void load_weights(nn::Module& module, const std::vector<nn::NamedTensor>& params,
                  const std::vector<nn::NamedTensor>& buffers);

}  // namespace osscl

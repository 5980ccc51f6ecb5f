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

#include <filesystem>
#include <string>

#include "json.hpp"
#include "osscl/losses.hpp"
#include "osscl/model.hpp"
#include "osscl/training.hpp"

namespace osscl {

enum class WeightSet { raw, ema };
// Global average over machine types, or over every machine id.
enum class AverageMode { types, ids };

std::string to_string(WeightSet w);
WeightSet weight_set_from_string(const std::string& s);

struct EvalConfig {
  WeightSet weights = WeightSet::ema;
  double pauc_p = 0.1;
  AverageMode average = AverageMode::types;
  bool operator==(const EvalConfig&) const = default;
};

// Everything a run needs. JSON layout: sections "stft", "tgram", "tfgram",
// "model", "losses", "training", "eval"; unknown sections or keys are errors.
struct RunConfig {
  ModelConfig model = paper_logmel_config();
  ContrastiveConfig contrastive;
  TrainConfig training;
  EvalConfig eval;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep their defaults; the backbone input geometry is derived
// from the feature mode and STFT settings.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Makes the backbone geometry consistent with feature_mode and stft.
void sync_derived_fields(RunConfig& cfg);

}  // namespace osscl

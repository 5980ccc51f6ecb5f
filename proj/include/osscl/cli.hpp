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
#include <optional>
#include <string>
#include <vector>

#include "osscl/config.hpp"
#include "osscl/corpus.hpp"
#include "osscl/eval.hpp"

namespace osscl {

// Parses "none,128,64" style lists; nullopt stands for a removed head.
std::vector<std::optional<std::size_t>> parse_reductions(const std::string& list);

struct AblationColumn {
  std::optional<std::size_t> reduction;
  EvalReport report;
};

// Trains and evaluates one model per FPH reduction under out_dir/fph_<r>.
std::vector<AblationColumn> ablate_fph(const DatasetManifest& manifest, const RunConfig& base,
                                       const std::vector<std::optional<std::size_t>>& reductions,
                                       const std::filesystem::path& out_dir, bool verbose = false);

// Machine types as rows, one AUC column per reduction, then an average row.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationColumn>& cols);

// Entry point of the osscl tool. Returns the process exit code: 0 on
// success, 2 for invalid arguments or missing inputs, 1 otherwise.
int run_cli(int argc, char** argv);

}  // namespace osscl

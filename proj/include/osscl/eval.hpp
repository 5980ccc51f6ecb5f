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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "osscl/checkpoint.hpp"
#include "osscl/config.hpp"
#include "osscl/corpus.hpp"

namespace osscl {

struct ScoredClip {
  ClipMetadata meta;
  double score = 0.0;  // higher = more anomalous
};

// Negative log-probability of the claimed machine ID under margin-free,
// scaled ArcFace logits. The FPH is not involved.
class AnomalyScorer {
 public:
  AnomalyScorer(const Checkpoint& ckpt, WeightSet weights);
  ~AnomalyScorer();

  double score(std::span<const float> samples, const MachineKey& claimed) const;
  // Scores clips in small batches; result order follows the input.
  std::vector<double> score(std::span<const AudioClip> clips) const;

  const std::map<MachineKey, int>& class_map() const { return class_map_; }

 private:
  std::vector<double> score_chunk(std::span<const AudioClip> clips) const;

  std::map<MachineKey, int> class_map_;
  std::unique_ptr<OsSclModel> model_;
  std::unique_ptr<LogMelExtractor> extractor_;
};

// Turns one row of scaled logits into the anomaly score of class `target`.
double score_from_logits(std::span<const double> logits, int target);

// Pairwise (Mann-Whitney) AUC with ties counted as one half.
double auc(std::span<const double> scores, std::span<const Label> labels);

// Area under the empirical ROC over FPR in [0, p]. Standardized (McClish)
// unless `standardized` is false, in which case the area divided by p.
double pauc(std::span<const double> scores, std::span<const Label> labels, double p = 0.1,
            bool standardized = true);

double mauc(const std::map<int, double>& per_id_auc);

struct IdMetrics {
  MachineKey key;
  double auc = 0.0;
  double pauc = 0.0;
  std::size_t n_normal = 0;
  std::size_t n_anomaly = 0;
};

struct TypeMetrics {
  std::string machine_type;
  double auc = 0.0;   // mean over IDs
  double pauc = 0.0;  // mean over IDs
  double mauc = 0.0;  // min over IDs
};

struct EvalReport {
  std::vector<IdMetrics> ids;      // sorted by key
  std::vector<TypeMetrics> types;  // sorted by type
  double average_auc = 0.0;
  double average_pauc = 0.0;
  double average_mauc = 0.0;  // always a mean over types
  double pauc_p = 0.1;
  AverageMode average = AverageMode::types;
};

EvalReport build_report(std::span<const ScoredClip> scores, double pauc_p = 0.1,
                        AverageMode average = AverageMode::types);

// Scores every test clip against its own claimed ID and aggregates.
EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                    const EvalConfig& cfg, std::vector<ScoredClip>* scores_out = nullptr);

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoredClip> scores);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
nlohmann::json to_json(const EvalReport& report);
// Plain-text table in percent.
std::string format_report(const EvalReport& report);

}  // namespace osscl

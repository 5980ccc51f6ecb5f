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

#include <span>
#include <string>
#include <vector>

#include "osscl/model.hpp"
#include "osscl/nn/tensor.hpp"

namespace osscl {

// How the per-anchor contrastive terms are combined: plain sum over anchors,
// or that sum divided by the batch size.
enum class SupconReduction { sum, batch_mean };

std::string to_string(SupconReduction r);
SupconReduction supcon_reduction_from_string(const std::string& s);

struct ContrastiveConfig {
  double temperature = 0.02;
  SupconReduction reduction = SupconReduction::batch_mean;
  bool operator==(const ContrastiveConfig&) const = default;
};

// For every anchor i, the other batch positions sharing its label. Only the
// anchor labels are consulted, which is what makes mixed samples noisy
// positives.
std::vector<std::vector<std::size_t>> positive_sets(std::span<const int> anchor_labels);

// Supervised contrastive loss over unit-norm rows z with positives chosen by
// y_a. Anchors without positives contribute zero. Throws if a row is off the
// unit sphere by more than 1e-4 or B < 2.
nn::Tensor supcon_noise_loss(const nn::Tensor& z, std::span<const int> y_a,
                             const ContrastiveConfig& cfg);

// lambda * CE(logits, y_a) + (1 - lambda) * CE(logits, y_b) with the ArcFace
// margin placed at y_a in both terms.
nn::Tensor noisy_arcmix_loss(const nn::Tensor& emb, std::span<const int> y_a,
                             std::span<const int> y_b, double lambda, const ArcFaceHead& head);

struct LossParts {
  nn::Tensor total;
  nn::Tensor supcon;
  nn::Tensor namix;
};

// Unweighted sum of the two objectives. z feeds the contrastive term and the
// raw embedding feeds the classifier.
LossParts total_loss(const nn::Tensor& z, const nn::Tensor& emb, std::span<const int> y_a,
                     std::span<const int> y_b, double lambda, const ArcFaceHead& head,
                     const ContrastiveConfig& cfg);

}  // namespace osscl

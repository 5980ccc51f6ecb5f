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

#include "osscl/losses.hpp"

#include <algorithm>
#include <cmath>

#include "osscl/error.hpp"
#include "osscl/nn/ops.hpp"

namespace osscl {

std::string to_string(SupconReduction r) { return r == SupconReduction::sum ? "sum" : "batch_mean"; }

SupconReduction supcon_reduction_from_string(const std::string& s) {
  if (s == "sum") return SupconReduction::sum;
  if (s == "batch_mean") return SupconReduction::batch_mean;
  throw InvalidArgument("unknown contrastive reduction '" + s + "' (expected sum or batch_mean)");
}

std::vector<std::vector<std::size_t>> positive_sets(std::span<const int> anchor_labels) {
  const std::size_t n = anchor_labels.size();
  std::vector<std::vector<std::size_t>> sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && anchor_labels[j] == anchor_labels[i]) sets[i].push_back(j);
    }
  }
  return sets;
}

nn::Tensor supcon_noise_loss(const nn::Tensor& z, std::span<const int> y_a,
                             const ContrastiveConfig& cfg) {
  if (z.dim() != 2) throw ShapeError("supcon: expected B x E input");
  const std::size_t n = z.size(0), dim = z.size(1);
  if (n < 2) throw InvalidArgument("supcon: need at least 2 samples");
  if (y_a.size() != n) throw InvalidArgument("supcon: label count does not match batch");
  if (!(cfg.temperature > 0.0)) throw InvalidArgument("supcon: temperature must be positive");
  auto zv = z.values();
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t k = 0; k < dim; ++k) ss += zv[i * dim + k] * zv[i * dim + k];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4) {
      throw InvalidArgument("supcon: row " + std::to_string(i) + " is not unit-norm (norm " +
                            std::to_string(std::sqrt(ss)) + ")");
    }
  }
  const double inv_tau = 1.0 / cfg.temperature;
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += zv[i * dim + k] * zv[j * dim + k];
      sim[i * n + j] = sim[j * n + i] = dot * inv_tau;
    }
  }
  const auto positives = positive_sets(y_a);
  const double weight = cfg.reduction == SupconReduction::batch_mean ? 1.0 / static_cast<double>(n) : 1.0;

  // coeff[i][j] = d loss / d sim[i][j].
  std::vector<double> coeff(n * n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pos = positives[i];
    if (pos.empty()) continue;
    double mx = -INFINITY;
    for (std::size_t a = 0; a < n; ++a) {
      if (a != i) mx = std::max(mx, sim[i * n + a]);
    }
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a != i) denom += std::exp(sim[i * n + a] - mx);
    }
    const double lse = mx + std::log(denom);
    const double inv_p = 1.0 / static_cast<double>(pos.size());
    double term = 0.0;
    for (std::size_t p : pos) term += sim[i * n + p] - lse;
    total += -inv_p * term * weight;
    for (std::size_t a = 0; a < n; ++a) {
      if (a != i) coeff[i * n + a] += weight * std::exp(sim[i * n + a] - lse);
    }
    for (std::size_t p : pos) coeff[i * n + p] -= weight * inv_p;
  }
  return nn::make_op_result({1}, {total}, {z}, [n, dim, inv_tau, coeff = std::move(coeff)](nn::Node& o) {
    const auto& zin = o.inputs[0]->value;
    auto& g = o.inputs[0]->ensure_grad();
    const double k = o.grad[0] * inv_tau;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double c = (coeff[i * n + j] + coeff[j * n + i]) * k;
        if (c == 0.0) continue;
        for (std::size_t d = 0; d < dim; ++d) g[i * dim + d] += c * zin[j * dim + d];
      }
    }
  });
}

nn::Tensor noisy_arcmix_loss(const nn::Tensor& emb, std::span<const int> y_a,
                             std::span<const int> y_b, double lambda, const ArcFaceHead& head) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("noisy arcmix: lambda outside [0, 1]");
  if (y_b.size() != y_a.size()) throw InvalidArgument("noisy arcmix: y_a and y_b differ in length");
  const std::size_t classes = head.num_classes();
  for (int y : y_b) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InvalidArgument("noisy arcmix: label " + std::to_string(y) + " out of range");
    }
  }
  nn::Tensor logits = arcface_logits(emb, y_a, head, /*apply_margin=*/true);
  return nn::add(nn::scale(nn::cross_entropy(logits, y_a), lambda),
                 nn::scale(nn::cross_entropy(logits, y_b), 1.0 - lambda));
}

LossParts total_loss(const nn::Tensor& z, const nn::Tensor& emb, std::span<const int> y_a,
                     std::span<const int> y_b, double lambda, const ArcFaceHead& head,
                     const ContrastiveConfig& cfg) {
  LossParts parts;
  parts.supcon = supcon_noise_loss(z, y_a, cfg);
  parts.namix = noisy_arcmix_loss(emb, y_a, y_b, lambda, head);
  parts.total = nn::add(parts.supcon, parts.namix);
  return parts;
}

}  // namespace osscl

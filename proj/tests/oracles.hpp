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

// Deliberately naive reference implementations that the library is checked
// against. They share no code with src/.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "osscl/corpus.hpp"
#include "osscl/nn/tensor.hpp"
#include "test_util.hpp"

namespace osscl::testing {

inline nn::Tensor unit_rows(std::size_t b, std::size_t e, std::mt19937_64& rng) {
  nn::Tensor z = random_tensor({b, e}, rng);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < e; ++k) s += z.at(i * e + k) * z.at(i * e + k);
    for (std::size_t k = 0; k < e; ++k) z.at(i * e + k) /= std::sqrt(s);
  }
  return z;
}

inline std::vector<int> random_labels(std::size_t b, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> y(b);
  for (int& v : y) v = u(rng);
  return y;
}

// Straight transcription of the per-anchor definition, no stabilization.
inline double naive_supcon(const nn::Tensor& z, const std::vector<int>& y, double tau, bool mean) {
  const std::size_t b = z.size(0), e = z.size(1);
  auto dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < e; ++k) s += z.at(i * e + k) * z.at(j * e + k);
    return s;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0.0;
    for (std::size_t a = 0; a < b; ++a)
      if (a != i) denom += std::exp(dot(i, a) / tau);
    double acc = 0.0;
    int count = 0;
    for (std::size_t p = 0; p < b; ++p) {
      if (p == i || y[p] != y[i]) continue;
      acc += std::log(std::exp(dot(i, p) / tau) / denom);
      ++count;
    }
    if (count > 0) total += -acc / count;
  }
  return mean ? total / static_cast<double>(b) : total;
}

// Two separate cross-entropy passes over hand-built margin logits.
inline double naive_arcmix(const nn::Tensor& emb, const nn::Tensor& w, const std::vector<int>& ya,
                    const std::vector<int>& yb, double lambda, double s, double m) {
  const std::size_t b = emb.size(0), e = emb.size(1), c = w.size(0);
  auto norm = [e](const nn::Tensor& t, std::size_t r) {
    double q = 0.0;
    for (std::size_t k = 0; k < e; ++k) q += t.at(r * e + k) * t.at(r * e + k);
    return std::sqrt(q);
  };
  double ce_a = 0.0, ce_b = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> logits(c);
    for (std::size_t j = 0; j < c; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < e; ++k) d += emb.at(i * e + k) * w.at(j * e + k);
      const double cosine = d / (norm(emb, i) * norm(w, j));
      if (static_cast<int>(j) == ya[i]) {
        const double theta = std::acos(std::clamp(cosine, -1.0, 1.0));
        logits[j] = theta + m < std::numbers::pi ? s * std::cos(theta + m) : s * (cosine - m * std::sin(m));
      } else {
        logits[j] = s * cosine;
      }
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    ce_a += std::log(z) - logits[static_cast<std::size_t>(ya[i])];
    ce_b += std::log(z) - logits[static_cast<std::size_t>(yb[i])];
  }
  return lambda * ce_a / static_cast<double>(b) + (1.0 - lambda) * ce_b / static_cast<double>(b);
}

inline double pairwise_auc(const std::vector<double>& s, const std::vector<Label>& y) {
  long twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] == Label::anomaly ? pos : neg)++;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != Label::anomaly || y[j] != Label::normal) continue;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos * neg));
}

// Empirical ROC by sweeping every distinct threshold from the top.
inline std::vector<std::pair<double, double>> roc(const std::vector<double>& s, const std::vector<Label>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  const double pos = static_cast<double>(std::count(y.begin(), y.end(), Label::anomaly));
  const double neg = static_cast<double>(y.size()) - pos;
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] == Label::anomaly ? tp : fp) += 1;
    }
    pts.emplace_back(fp / neg, tp / pos);
  }
  return pts;
}

inline double clipped_area(const std::vector<std::pair<double, double>>& pts, double p) {
  double area = 0.0;
  for (std::size_t k = 1; k < pts.size(); ++k) {
    auto [x0, y0] = pts[k - 1];
    auto [x1, y1] = pts[k];
    if (x0 >= p) break;
    if (x1 > p) {
      y1 = y0 + (y1 - y0) * (p - x0) / (x1 - x0);
      x1 = p;
    }
    area += (x1 - x0) * (y0 + y1) / 2.0;
  }
  return area;
}

}  // namespace osscl::testing

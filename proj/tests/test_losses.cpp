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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "osscl/error.hpp"
#include "osscl/losses.hpp"
#include "osscl/nn/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace osscl;
using osscl::testing::grad_check;
using osscl::testing::random_tensor;
using namespace osscl::testing;

TEST_CASE("positive sets use anchor labels and exclude the anchor") {
  const std::vector<int> y{0, 1, 0, 2, 0};
  const auto p = positive_sets(y);
  CHECK(p[0] == std::vector<std::size_t>{2, 4});
  CHECK(p[1].empty());
  CHECK(p[4] == std::vector<std::size_t>{0, 2});
}

TEST_CASE("supcon equals the double-loop oracle on random batches") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> bsz(2, 16), esz(2, 8);
  std::uniform_int_distribution<int> csz(1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = bsz(rng), e = esz(rng);
    const nn::Tensor z = unit_rows(b, e, rng);
    const auto y = random_labels(b, csz(rng), rng);
    for (const auto red : {SupconReduction::sum, SupconReduction::batch_mean}) {
      const double got = supcon_noise_loss(z, y, {0.02, red}).item();
      const double ref = naive_supcon(z, y, 0.02, red == SupconReduction::batch_mean);
      CHECK(got == doctest::Approx(ref).epsilon(1e-9));
    }
    const double t1 = supcon_noise_loss(z, y, {0.5, SupconReduction::sum}).item();
    CHECK(t1 == doctest::Approx(naive_supcon(z, y, 0.5, false)).epsilon(1e-9));
  }
}

TEST_CASE("supcon reductions differ by exactly the batch size") {
  std::mt19937_64 rng(2);
  const nn::Tensor z = unit_rows(8, 4, rng);
  const std::vector<int> y{0, 0, 1, 1, 2, 2, 0, 1};
  const double s = supcon_noise_loss(z, y, {0.1, SupconReduction::sum}).item();
  const double m = supcon_noise_loss(z, y, {0.1, SupconReduction::batch_mean}).item();
  CHECK(s == doctest::Approx(8.0 * m));
}

TEST_CASE("supcon is zero without positives and rejects bad input") {
  std::mt19937_64 rng(3);
  const nn::Tensor z = unit_rows(4, 3, rng);
  const std::vector<int> distinct{0, 1, 2, 3};
  CHECK(supcon_noise_loss(z, distinct, {}).item() == 0.0);
  CHECK_THROWS_AS(supcon_noise_loss(random_tensor({4, 3}, rng, 2.0, 3.0), distinct, {}), InvalidArgument);
  const std::vector<int> one{0};
  CHECK_THROWS_AS(supcon_noise_loss(unit_rows(1, 3, rng), one, {}), InvalidArgument);
}

TEST_CASE("supcon gradient matches finite differences") {
  std::mt19937_64 rng(4);
  nn::Tensor z = unit_rows(6, 5, rng);
  const std::vector<int> y{0, 1, 0, 1, 2, 0};
  CHECK(grad_check([&] { return supcon_noise_loss(z, y, {0.5, SupconReduction::sum}); }, {z}).rel < 1e-7);
  CHECK(grad_check([&] { return supcon_noise_loss(z, y, {0.02, SupconReduction::batch_mean}); }, {z}, 1e-7).rel < 1e-5);
}

TEST_CASE("noisy arcmix equals the two-pass oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    nn::Rng init(static_cast<std::uint64_t>(trial));
    const double m = trial % 2 ? 0.7 : 0.4;
    ArcFaceHead head(5, 6, ArcFaceConfig{30.0, m}, init);
    const nn::Tensor emb = random_tensor({7, 6}, rng);
    const auto ya = random_labels(7, 5, rng), yb = random_labels(7, 5, rng);
    const double lambda = u01(rng);
    const double got = noisy_arcmix_loss(emb, ya, yb, lambda, head).item();
    CHECK(got == doctest::Approx(naive_arcmix(emb, head.weight, ya, yb, lambda, 30.0, m)).epsilon(1e-10));
  }
}

TEST_CASE("noisy arcmix at lambda 1 is the margin cross entropy") {
  nn::Rng init(1);
  ArcFaceHead head(3, 4, ArcFaceConfig{30.0, 0.7}, init);
  std::mt19937_64 rng(6);
  const nn::Tensor emb = random_tensor({4, 4}, rng);
  const std::vector<int> ya{0, 1, 2, 0}, yb{2, 2, 1, 1};
  const double ce = nn::cross_entropy(arcface_logits(emb, ya, head, true), ya).item();
  CHECK(noisy_arcmix_loss(emb, ya, yb, 1.0, head).item() == doctest::Approx(ce));
  CHECK_THROWS_AS(noisy_arcmix_loss(emb, ya, yb, 1.2, head), InvalidArgument);
}

TEST_CASE("total loss is the plain sum and gradchecks through FPH and head") {
  nn::Rng init(7);
  ArcFaceHead head(3, 6, ArcFaceConfig{30.0, 0.7}, init);
  FeaturePerturbationHead fph(6, FphConfig{3, FphActivation::leaky_relu, 0.01}, init);
  std::mt19937_64 rng(8);
  nn::Tensor emb = random_tensor({6, 6}, rng);
  const std::vector<int> ya{0, 1, 2, 0, 1, 2}, yb{1, 2, 0, 0, 2, 1};
  const ContrastiveConfig cc{0.02, SupconReduction::batch_mean};
  const LossParts parts = total_loss(fph.forward(emb), emb, ya, yb, 0.35, head, cc);
  CHECK(parts.total.item() == doctest::Approx(parts.supcon.item() + parts.namix.item()).epsilon(1e-14));
  std::vector<nn::Tensor> wrt{emb, head.weight};
  for (auto& p : fph.parameters()) wrt.push_back(p);
  const auto gc = grad_check(
      [&] { return total_loss(fph.forward(emb), emb, ya, yb, 0.35, head, cc).total; }, wrt, 1e-7);
  CHECK(gc.rel < 1e-5);
}

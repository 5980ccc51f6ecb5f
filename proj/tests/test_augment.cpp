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
#include <set>

#include "doctest.h"
#include "osscl/augment.hpp"
#include "osscl/error.hpp"
#include "test_util.hpp"

using namespace osscl;
using osscl::testing::random_tensor;

TEST_CASE("lambda follows Beta(0.5, 0.5)") {
  std::mt19937_64 rng(1);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  int extreme = 0;
  bool in_range = true;
  for (int i = 0; i < n; ++i) {
    const double l = sample_lambda(rng);
    in_range = in_range && l >= 0.0 && l <= 1.0;
    s += l;
    ss += l * l;
    if (l < 0.1 || l > 0.9) ++extreme;
  }
  CHECK(in_range);
  const double mean = s / n, var = ss / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  // alpha^2 / ((2 alpha)^2 (2 alpha + 1)) = 1/8 for alpha = 1/2.
  CHECK(var == doctest::Approx(0.125).epsilon(0.02));
  // P(l < 0.1) = (2/pi) asin(sqrt(0.1)); the U shape puts ~40.97% in the tails.
  const double tails = 2.0 * (2.0 / M_PI) * std::asin(std::sqrt(0.1));
  CHECK(static_cast<double>(extreme) / n == doctest::Approx(tails).epsilon(0.02));
}

TEST_CASE("permutations are uniform-ish bijections") {
  std::mt19937_64 rng(2);
  const auto p = sample_permutation(10, rng);
  CHECK(std::set<std::size_t>(p.begin(), p.end()).size() == 10);
  std::vector<int> first(4, 0);
  for (int i = 0; i < 40000; ++i) ++first[sample_permutation(4, rng)[0]];
  for (int c : first) CHECK(c == doctest::Approx(10000).epsilon(0.05));
}

TEST_CASE("mix_rows matches the elementwise definition") {
  std::mt19937_64 rng(3);
  const nn::Tensor x = random_tensor({4, 3, 2}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const nn::Tensor y = mix_rows(x, 0.3, perm);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 6; ++k)
      CHECK(y.at(i * 6 + k) == doctest::Approx(0.3 * x.at(i * 6 + k) + 0.7 * x.at(perm[i] * 6 + k)));
  const std::vector<std::size_t> bad{0, 0, 1, 2};
  CHECK_THROWS_AS(mix_rows(x, 0.3, bad), InvalidArgument);
}

TEST_CASE("mixing with lambda and 1 - lambda sums to a lambda-free pair sum") {
  std::mt19937_64 rng(4);
  const nn::Tensor x = random_tensor({5, 7}, rng);
  const auto perm = sample_permutation(5, rng);
  for (double l : {0.0, 0.2, 0.5, 0.93, 1.0}) {
    const nn::Tensor a = mix_rows(x, l, perm), b = mix_rows(x, 1.0 - l, perm);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < 7; ++k)
        CHECK(a.at(i * 7 + k) + b.at(i * 7 + k) ==
              doctest::Approx(x.at(i * 7 + k) + x.at(perm[i] * 7 + k)).epsilon(1e-12));
  }
  // Identity at the endpoints.
  const nn::Tensor same = mix_rows(x, 1.0, perm);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.at(i) == x.at(i));
}

TEST_CASE("mixup_batch pairs labels with the permutation and leaves the batch intact") {
  std::mt19937_64 rng(5);
  Batch b;
  b.logmels = random_tensor({4, 2, 3}, rng);
  b.waveforms = random_tensor({4, 8}, rng);
  b.labels = {0, 1, 2, 1};
  const std::vector<double> before(b.logmels.values().begin(), b.logmels.values().end());
  const std::vector<std::size_t> perm{3, 2, 1, 0};
  const MixedBatch m = mixup_batch(b, 0.6, perm);
  CHECK(m.y_a == b.labels);
  CHECK(m.y_b == std::vector<int>{1, 2, 1, 0});
  CHECK(m.lambda == 0.6);
  CHECK(m.waveforms.at(8 + 2) == doctest::Approx(0.6 * b.waveforms.at(8 + 2) + 0.4 * b.waveforms.at(16 + 2)));
  CHECK(std::equal(before.begin(), before.end(), b.logmels.values().begin()));

  Batch one;
  one.logmels = random_tensor({1, 2, 3}, rng);
  one.labels = {0};
  const std::vector<std::size_t> p1{0};
  CHECK_THROWS_AS(mixup_batch(one, 0.5, p1), InvalidArgument);
  CHECK_THROWS_AS(mixup_batch(b, 1.5, perm), InvalidArgument);
}

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
#include <complex>
#include <numbers>
#include <random>
#include <thread>

#include "doctest.h"
#include "osscl/error.hpp"
#include "osscl/features.hpp"
#include "test_util.hpp"

using namespace osscl;
using osscl::testing::random_tensor;

namespace {

StftConfig small_config() {
  StftConfig c;
  c.n_fft = 64;
  c.hop = 16;
  c.n_mels = 8;
  c.clip_length = 256;
  return c;
}

// Triangle weights built from the textbook piecewise definition.
double triangle(double f, double lo, double c, double hi) {
  if (f <= lo || f >= hi) return 0.0;
  return f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
}

// Naive DFT log-Mel used as an oracle for the FFT path.
std::vector<double> naive_log_mel(const std::vector<double>& x, const StftConfig& c) {
  const std::size_t n = c.n_fft, half = n / 2, bins = n / 2 + 1;
  std::vector<double> padded(x.size() + n);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    long j = static_cast<long>(i) - static_cast<long>(half);
    const long L = static_cast<long>(x.size());
    if (j < 0) j = -j;
    if (j >= L) j = 2 * (L - 1) - j;
    padded[i] = x[static_cast<std::size_t>(j)];
  }
  const double mlo = 2595.0 * std::log10(1.0 + c.f_min / 700.0);
  const double mhi = 2595.0 * std::log10(1.0 + c.f_max / 700.0);
  std::vector<double> edges(c.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double m = mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(c.n_mels + 1);
    edges[i] = 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
  }
  const std::size_t frames = 1 + x.size() / c.hop;
  std::vector<double> out(c.n_mels * frames);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
        acc += w * padded[t * c.hop + i] *
               std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n));
      }
      power[k] = std::norm(acc);
    }
    for (std::size_t m = 0; m < c.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * c.sample_rate / static_cast<double>(n);
        e += triangle(f, edges[m], edges[m + 1], edges[m + 2]) * power[k];
      }
      out[m * frames + t] = std::log(e + c.eps);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("HTK mel scale") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  for (double hz : {10.0, 440.0, 1000.0, 7999.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
}

TEST_CASE("default STFT geometry yields 313 frames") {
  CHECK(StftConfig{}.frames() == 313);
  CHECK(mel_filterbank(StftConfig{}).size() == 128 * 513);
}

TEST_CASE("filterbank rows are unnormalized triangles between neighbouring centers") {
  const StftConfig c = small_config();
  const auto fb = mel_filterbank(c);
  const auto centers = mel_center_frequencies(c);
  REQUIRE(centers.size() == c.n_mels);
  const std::size_t bins = c.n_fft / 2 + 1;
  for (std::size_t m = 0; m < c.n_mels; ++m) {
    const double lo = m == 0 ? c.f_min : centers[m - 1];
    const double hi = m + 1 == c.n_mels ? mel_to_hz(hz_to_mel(c.f_max)) : centers[m + 1];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * c.sample_rate / static_cast<double>(c.n_fft);
      CHECK(fb[m * bins + k] == doctest::Approx(triangle(f, lo, centers[m], hi)).epsilon(1e-12));
      CHECK(fb[m * bins + k] <= 1.0);
    }
  }
}

TEST_CASE("FFT log-Mel equals a naive DFT oracle") {
  const StftConfig c = small_config();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 0.3);
  std::vector<double> x(c.clip_length);
  for (double& v : x) v = g(rng);
  LogMelExtractor ex(c);
  const auto fast = ex.compute(std::span<const double>(x));
  const auto ref = naive_log_mel(x, c);
  REQUIRE(fast.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(fast[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("a pure tone peaks in the mel band containing its frequency") {
  StftConfig c;
  c.clip_length = 16000;
  const double f0 = 1000.0;
  std::vector<double> x(c.clip_length);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(i) / 16000.0);
  const auto lm = LogMelExtractor(c).compute(std::span<const double>(x));
  const std::size_t frames = c.frames(), mid = frames / 2;
  std::size_t best = 0;
  for (std::size_t m = 1; m < c.n_mels; ++m) {
    if (lm[m * frames + mid] > lm[best * frames + mid]) best = m;
  }
  const auto centers = mel_center_frequencies(c);
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < c.n_mels; ++m) {
    if (std::abs(centers[m] - f0) < std::abs(centers[nearest] - f0)) nearest = m;
  }
  CHECK(static_cast<long>(best) - static_cast<long>(nearest) <= 1);
  CHECK(static_cast<long>(nearest) - static_cast<long>(best) <= 1);
}

TEST_CASE("log-Mel on a 10 s clip is 128 x 313 and rejects other lengths") {
  std::vector<double> x(160000, 0.0);
  const nn::Tensor lm = log_mel(x, StftConfig{});
  CHECK(lm.shape() == nn::Shape{128, 313});
  CHECK(lm.at(0) == doctest::Approx(std::log(1e-8)));
  std::vector<double> short_clip(1000, 0.0);
  CHECK_THROWS_AS(log_mel(short_clip, StftConfig{}), ShapeError);
}

TEST_CASE("extractor is safe to share across threads") {
  const StftConfig c = small_config();
  LogMelExtractor ex(c);
  std::vector<std::vector<double>> inputs(4, std::vector<double>(c.clip_length));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (auto& in : inputs) for (double& v : in) v = g(rng);
  std::vector<std::vector<double>> serial, parallel(4);
  for (const auto& in : inputs) serial.push_back(ex.compute(std::span<const double>(in)));
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] { parallel[i] = ex.compute(std::span<const double>(inputs[i])); });
  }
  for (auto& t : threads) t.join();
  CHECK(serial == parallel);
}

TEST_CASE("Tgram maps a 10 s waveform to 128 x 313") {
  nn::Rng rng(0);
  TgramNet net(TgramConfig{}, rng);
  std::mt19937_64 r(1);
  const nn::Tensor y = net.forward(random_tensor({1, 160000}, r));
  CHECK(y.shape() == nn::Shape{1, 128, 313});
  CHECK(net.stem().weight.shape() == nn::Shape{128, 1, 1024});
  CHECK_FALSE(net.stem().bias.defined());
}

TEST_CASE("TFgram pooling chain passes through 626 and 313") {
  nn::Rng rng(0);
  TfgramNet net(TfgramConfig{}, rng);
  std::mt19937_64 r(2);
  std::vector<nn::Shape> trace;
  const nn::Tensor y = net.forward(random_tensor({1, 160000}, r), &trace);
  CHECK(y.shape() == nn::Shape{1, 128, 313});
  REQUIRE(trace.size() == 7);
  CHECK(trace[0] == nn::Shape{1, 64, 32000});
  CHECK(trace[2] == nn::Shape{1, 64, 8000});
  CHECK(trace[4] == nn::Shape{1, 64, 626});
  CHECK(trace[6] == nn::Shape{1, 128, 313});
  CHECK_THROWS_AS(net.forward(nn::Tensor(nn::Shape{1, 4000})), ShapeError);
}

TEST_CASE("feature stacking orders channels and checks shapes") {
  std::mt19937_64 r(3);
  const nn::Tensor a = random_tensor({2, 4, 5}, r), b = random_tensor({2, 4, 5}, r),
                   c = random_tensor({2, 4, 5}, r);
  const auto one = stack_features(a, {}, {}, FeatureMode::logmel);
  CHECK(one.data.shape() == nn::Shape{2, 1, 4, 5});
  CHECK(one.roles == std::vector<ChannelRole>{ChannelRole::logmel});
  const auto three = stack_features(a, b, c, FeatureMode::tfst);
  CHECK(three.data.shape() == nn::Shape{2, 3, 4, 5});
  CHECK(three.roles == std::vector<ChannelRole>{ChannelRole::logmel, ChannelRole::tgram, ChannelRole::tfgram});
  // Sample 1, channel 2 holds c's sample 1.
  CHECK(three.data.at((1 * 3 + 2) * 20 + 7) == c.at(20 + 7));
  CHECK_THROWS_AS(stack_features(a, b, random_tensor({2, 4, 6}, r), FeatureMode::tfst), ShapeError);
  CHECK_THROWS_AS(stack_features(a, {}, {}, FeatureMode::tfst), ShapeError);
}

TEST_CASE("feature dump round trip") {
  std::mt19937_64 r(4);
  const auto stack = stack_features(random_tensor({1, 3, 4}, r), random_tensor({1, 3, 4}, r),
                                    random_tensor({1, 3, 4}, r), FeatureMode::tfst);
  const auto path = osscl::testing::scratch_dir("dump") / "f.bin";
  write_feature_dump(path, stack);
  const auto back = read_feature_dump(path);
  CHECK(back.data.shape() == stack.data.shape());
  CHECK(back.roles == stack.roles);
  for (std::size_t i = 0; i < stack.data.numel(); ++i) {
    CHECK(back.data.at(i) == doctest::Approx(stack.data.at(i)).epsilon(1e-6));
  }
}

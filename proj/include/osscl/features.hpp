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
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "osscl/nn/layers.hpp"

namespace osscl {

// Defaults turn a 10 s / 16 kHz clip into 128 mel bins x 313 frames.
struct StftConfig {
  std::size_t n_fft = 1024;
  std::size_t hop = 512;
  std::size_t n_mels = 128;
  std::uint32_t sample_rate = 16000;
  double eps = 1e-8;
  double f_min = 0.0;
  double f_max = 8000.0;
  std::size_t clip_length = 160000;

  std::size_t frames() const { return 1 + clip_length / hop; }
  bool operator==(const StftConfig&) const = default;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Peak frequency of each HTK triangular filter.
std::vector<double> mel_center_frequencies(const StftConfig& cfg);
// n_mels x (n_fft/2 + 1), unnormalized triangles.
std::vector<double> mel_filterbank(const StftConfig& cfg);

// Hann-windowed, centered (reflect-padded) power STFT -> mel -> ln(. + eps).
// Holds an FFT plan; compute() is const and may be called concurrently.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const StftConfig& cfg);
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  // Row-major n_mels x frames.
  std::vector<double> compute(std::span<const double> waveform) const;
  std::vector<double> compute(std::span<const float> waveform) const;
  const StftConfig& config() const { return cfg_; }

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  std::vector<double> filterbank_;
  struct Plan;
  std::unique_ptr<Plan> plan_;
};

// One-shot convenience wrapper; returns an M x N tensor.
nn::Tensor log_mel(std::span<const double> waveform, const StftConfig& cfg);

// Learnable time-domain front end: strided conv then three
// (layer norm over channels, leaky ReLU, conv k3) blocks.
struct TgramConfig {
  std::size_t channels = 128;
  std::size_t kernel = 1024;
  std::size_t stride = 512;
  std::size_t padding = 512;
  std::size_t blocks = 3;
  double slope = 0.01;
  bool operator==(const TgramConfig&) const = default;
};

class TgramNet : public nn::Module {
 public:
  TgramNet(const TgramConfig& cfg, nn::Rng& rng);
  // B x L -> B x channels x frames.
  nn::Tensor forward(const nn::Tensor& waveforms);

  const TgramConfig& config() const { return cfg_; }
  nn::Conv1d& stem() { return *stem_; }
  nn::Conv1d& last_conv() { return *convs_.back(); }

 private:
  TgramConfig cfg_;
  nn::Conv1d* stem_;
  std::vector<nn::LayerNormChannels*> norms_;
  std::vector<nn::Conv1d*> convs_;
};

// PANN-style learnable time-frequency front end.
struct TfgramConfig {
  std::size_t stem_channels = 64;
  std::size_t stem_kernel = 11;
  std::size_t stem_stride = 5;
  std::size_t stem_padding = 5;
  std::vector<std::size_t> block_channels{64, 64, 128};
  std::size_t first_pool = 4;
  // Output sizes of the adaptive max pools after blocks 2 and 3.
  std::vector<std::size_t> adaptive_sizes{626, 313};
  bool operator==(const TfgramConfig&) const = default;
};

// Two (conv k3 -> batch norm -> ReLU) layers; the second is dilated by 2.
class TfConvBlock : public nn::Module {
 public:
  TfConvBlock(std::size_t in, std::size_t out, nn::Rng& rng);
  nn::Tensor forward(const nn::Tensor& x);

 private:
  nn::Conv1d* conv1_;
  nn::BatchNorm* bn1_;
  nn::Conv1d* conv2_;
  nn::BatchNorm* bn2_;
};

class TfgramNet : public nn::Module {
 public:
  TfgramNet(const TfgramConfig& cfg, nn::Rng& rng);
  // B x L -> B x block_channels.back() x adaptive_sizes.back(). When `trace`
  // is given it receives the shape after every stage.
  nn::Tensor forward(const nn::Tensor& waveforms, std::vector<nn::Shape>* trace = nullptr);

  const TfgramConfig& config() const { return cfg_; }
  nn::Conv1d& stem() { return *stem_; }

 private:
  TfgramConfig cfg_;
  nn::Conv1d* stem_;
  nn::BatchNorm* stem_bn_;
  std::vector<TfConvBlock*> blocks_;
};

enum class FeatureMode { logmel, tfst };
enum class ChannelRole { logmel, tgram, tfgram };

std::string to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& s);
std::string to_string(ChannelRole role);

// B x C x M x N backbone input plus the meaning of each channel.
struct FeatureStack {
  nn::Tensor data;
  std::vector<ChannelRole> roles;
};

// Inputs are B x M x N. In logmel mode tgram/tfgram may be undefined.
FeatureStack stack_features(const nn::Tensor& logmel, const nn::Tensor& tgram,
                            const nn::Tensor& tfgram, FeatureMode mode);

// Debug dump: "OSFT" magic, u32 version, u32 rank, u64 dims, float32 payload
// (row-major), plus `<path>.json` naming the channel roles.
void write_feature_dump(const std::filesystem::path& path, const FeatureStack& stack);
FeatureStack read_feature_dump(const std::filesystem::path& path);

}  // namespace osscl

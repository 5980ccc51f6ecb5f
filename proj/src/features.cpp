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

#include "osscl/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "json.hpp"

#include "osscl/error.hpp"
#include "osscl/nn/ops.hpp"

namespace osscl {

namespace {
// FFTW planning is not thread-safe; execution on fresh arrays is.
std::mutex g_fftw_planner;
}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const StftConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> hz(cfg.n_mels + 2);
  for (std::size_t i = 0; i < hz.size(); ++i) {
    hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  return hz;
}

void validate(const StftConfig& cfg) {
  if (cfg.n_fft < 2 || cfg.hop == 0 || cfg.n_mels == 0 || cfg.sample_rate == 0 || cfg.eps <= 0 ||
      cfg.f_max <= cfg.f_min || cfg.f_max > cfg.sample_rate / 2.0) {
    throw InvalidArgument("invalid STFT configuration");
  }
}

}  // namespace

std::vector<double> mel_center_frequencies(const StftConfig& cfg) {
  auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<double> mel_filterbank(const StftConfig& cfg) {
  validate(cfg);
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const auto edges = mel_edges(cfg);
  std::vector<double> fb(cfg.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      const double w = std::min((f - lo) / (center - lo), (hi - f) / (hi - center));
      fb[m * bins + k] = std::max(0.0, w);
    }
  }
  return fb;
}

struct LogMelExtractor::Plan {
  fftw_plan plan = nullptr;
  ~Plan() {
    std::lock_guard lock(g_fftw_planner);
    if (plan) fftw_destroy_plan(plan);
  }
};

LogMelExtractor::LogMelExtractor(const StftConfig& cfg)
    : cfg_(cfg), filterbank_(mel_filterbank(cfg)), plan_(std::make_unique<Plan>()) {
  window_.resize(cfg_.n_fft);
  for (std::size_t i = 0; i < cfg_.n_fft; ++i) {
    // Periodic Hann.
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(cfg_.n_fft));
  }
  std::vector<double> in(cfg_.n_fft);
  std::vector<std::complex<double>> out(cfg_.n_fft / 2 + 1);
  std::lock_guard lock(g_fftw_planner);
  plan_->plan = fftw_plan_dft_r2c_1d(static_cast<int>(cfg_.n_fft), in.data(),
                                     reinterpret_cast<fftw_complex*>(out.data()),
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!plan_->plan) throw Error("FFTW planning failed");
}

LogMelExtractor::~LogMelExtractor() = default;

std::vector<double> LogMelExtractor::compute(std::span<const float> waveform) const {
  std::vector<double> wide(waveform.begin(), waveform.end());
  return compute(std::span<const double>(wide));
}

std::vector<double> LogMelExtractor::compute(std::span<const double> waveform) const {
  const std::size_t length = waveform.size();
  const std::size_t pad = cfg_.n_fft / 2;
  if (length != cfg_.clip_length || length <= pad) {
    throw ShapeError("log_mel: waveform length " + std::to_string(length) +
                     " does not produce the configured " + std::to_string(cfg_.frames()) +
                     " frames (expected " + std::to_string(cfg_.clip_length) + " samples)");
  }
  std::vector<double> padded(length + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    padded[i] = waveform[pad - i];
    padded[pad + length + i] = waveform[length - 2 - i];
  }
  std::copy(waveform.begin(), waveform.end(), padded.begin() + static_cast<std::ptrdiff_t>(pad));

  const std::size_t frames = cfg_.frames();
  const std::size_t bins = cfg_.n_fft / 2 + 1;
  std::vector<double> frame(cfg_.n_fft), power(bins);
  std::vector<std::complex<double>> spectrum(bins);
  std::vector<double> out(cfg_.n_mels * frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = padded.data() + t * cfg_.hop;
    for (std::size_t i = 0; i < cfg_.n_fft; ++i) frame[i] = src[i] * window_[i];
    fftw_execute_dft_r2c(plan_->plan, frame.data(),
                         reinterpret_cast<fftw_complex*>(spectrum.data()));
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(spectrum[k]);
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      const double* w = filterbank_.data() + m * bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += w[k] * power[k];
      out[m * frames + t] = std::log(acc + cfg_.eps);
    }
  }
  return out;
}

nn::Tensor log_mel(std::span<const double> waveform, const StftConfig& cfg) {
  LogMelExtractor extractor(cfg);
  return nn::Tensor({cfg.n_mels, cfg.frames()}, extractor.compute(waveform));
}

TgramNet::TgramNet(const TgramConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  stem_ = &register_module(
      "stem", std::make_unique<nn::Conv1d>(1, cfg.channels, cfg.kernel,
                                           nn::Conv1dOptions{cfg.stride, cfg.padding, 1},
                                           /*bias=*/false, rng));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    norms_.push_back(&register_module(prefix + ".norm",
                                      std::make_unique<nn::LayerNormChannels>(cfg.channels)));
    auto& conv = register_module(
        prefix + ".conv", std::make_unique<nn::Conv1d>(cfg.channels, cfg.channels, 3,
                                                       nn::Conv1dOptions{1, 1, 1}, true, rng));
    std::fill(conv.bias.values().begin(), conv.bias.values().end(), 0.0);
    convs_.push_back(&conv);
  }
}

nn::Tensor TgramNet::forward(const nn::Tensor& waveforms) {
  if (waveforms.dim() != 2) {
    throw ShapeError("tgram: expected B x L waveforms, got " + nn::shape_string(waveforms.shape()));
  }
  nn::Tensor x = stem_->forward(waveforms.reshape({waveforms.size(0), 1, waveforms.size(1)}));
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    x = convs_[b]->forward(nn::leaky_relu(norms_[b]->forward(x), cfg_.slope));
  }
  return x;
}

TfConvBlock::TfConvBlock(std::size_t in, std::size_t out, nn::Rng& rng) {
  conv1_ = &register_module(
      "conv1", std::make_unique<nn::Conv1d>(in, out, 3, nn::Conv1dOptions{1, 1, 1}, false, rng));
  bn1_ = &register_module("bn1", std::make_unique<nn::BatchNorm>(out));
  conv2_ = &register_module(
      "conv2", std::make_unique<nn::Conv1d>(out, out, 3, nn::Conv1dOptions{1, 2, 2}, false, rng));
  bn2_ = &register_module("bn2", std::make_unique<nn::BatchNorm>(out));
}

nn::Tensor TfConvBlock::forward(const nn::Tensor& x) {
  nn::Tensor h = nn::relu(bn1_->forward(conv1_->forward(x)));
  return nn::relu(bn2_->forward(conv2_->forward(h)));
}

TfgramNet::TfgramNet(const TfgramConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  if (cfg.block_channels.size() != 3 || cfg.adaptive_sizes.size() != 2) {
    throw InvalidArgument("tfgram: expects three conv blocks and two adaptive pool sizes");
  }
  stem_ = &register_module(
      "stem", std::make_unique<nn::Conv1d>(
                  1, cfg.stem_channels, cfg.stem_kernel,
                  nn::Conv1dOptions{cfg.stem_stride, cfg.stem_padding, 1}, false, rng));
  stem_bn_ = &register_module("stem_bn", std::make_unique<nn::BatchNorm>(cfg.stem_channels));
  std::size_t in = cfg.stem_channels;
  for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
    blocks_.push_back(&register_module("block" + std::to_string(b),
                                       std::make_unique<TfConvBlock>(in, cfg.block_channels[b], rng)));
    in = cfg.block_channels[b];
  }
}

nn::Tensor TfgramNet::forward(const nn::Tensor& waveforms, std::vector<nn::Shape>* trace) {
  if (waveforms.dim() != 2) {
    throw ShapeError("tfgram: expected B x L waveforms, got " + nn::shape_string(waveforms.shape()));
  }
  const std::size_t stem_len = nn::conv_output_length(waveforms.size(1), cfg_.stem_kernel,
                                                      cfg_.stem_stride, cfg_.stem_padding);
  if (stem_len / cfg_.first_pool < cfg_.adaptive_sizes[0] ||
      cfg_.adaptive_sizes[0] < cfg_.adaptive_sizes[1]) {
    throw ShapeError("tfgram: input of " + std::to_string(waveforms.size(1)) +
                     " samples is too short for the pooling chain");
  }
  auto record = [trace](const nn::Tensor& t) {
    if (trace) trace->push_back(t.shape());
  };
  nn::Tensor x = stem_->forward(waveforms.reshape({waveforms.size(0), 1, waveforms.size(1)}));
  x = nn::relu(stem_bn_->forward(x));
  record(x);
  x = blocks_[0]->forward(x);
  record(x);
  x = nn::max_pool1d(x, cfg_.first_pool);
  record(x);
  x = blocks_[1]->forward(x);
  record(x);
  x = nn::adaptive_max_pool1d(x, cfg_.adaptive_sizes[0]);
  record(x);
  x = blocks_[2]->forward(x);
  record(x);
  x = nn::adaptive_max_pool1d(x, cfg_.adaptive_sizes[1]);
  record(x);
  return x;
}

std::string to_string(FeatureMode mode) { return mode == FeatureMode::logmel ? "logmel" : "tfst"; }

FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "logmel") return FeatureMode::logmel;
  if (s == "tfst") return FeatureMode::tfst;
  throw InvalidArgument("unknown feature mode '" + s + "' (expected logmel or tfst)");
}

std::string to_string(ChannelRole role) {
  switch (role) {
    case ChannelRole::logmel: return "logmel";
    case ChannelRole::tgram: return "tgram";
    case ChannelRole::tfgram: return "tfgram";
  }
  return "?";
}

namespace {
ChannelRole role_from_string(const std::string& s) {
  if (s == "logmel") return ChannelRole::logmel;
  if (s == "tgram") return ChannelRole::tgram;
  if (s == "tfgram") return ChannelRole::tfgram;
  throw InvalidArgument("unknown channel role '" + s + "'");
}
}  // namespace

FeatureStack stack_features(const nn::Tensor& logmel, const nn::Tensor& tgram,
                            const nn::Tensor& tfgram, FeatureMode mode) {
  if (logmel.dim() != 3) {
    throw ShapeError("stack_features: expected B x M x N log-mel, got " +
                     nn::shape_string(logmel.shape()));
  }
  const nn::Shape& s = logmel.shape();
  const nn::Shape channel_shape{s[0], 1, s[1], s[2]};
  if (mode == FeatureMode::logmel) {
    return {logmel.reshape(channel_shape), {ChannelRole::logmel}};
  }
  if (!tgram.defined() || !tfgram.defined() || tgram.shape() != s || tfgram.shape() != s) {
    throw ShapeError("stack_features: feature views disagree in shape (" + nn::shape_string(s) +
                     ", " + (tgram.defined() ? nn::shape_string(tgram.shape()) : "none") + ", " +
                     (tfgram.defined() ? nn::shape_string(tfgram.shape()) : "none") + ")");
  }
  return {nn::concat_channels({logmel.reshape(channel_shape), tgram.reshape(channel_shape),
                               tfgram.reshape(channel_shape)}),
          {ChannelRole::logmel, ChannelRole::tgram, ChannelRole::tfgram}};
}

void write_feature_dump(const std::filesystem::path& path, const FeatureStack& stack) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature dump " + path.string());
  const std::uint32_t version = 1;
  const auto rank = static_cast<std::uint32_t>(stack.data.dim());
  out.write("OSFT", 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (std::size_t d : stack.data.shape()) {
    const auto dim = static_cast<std::uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  }
  std::vector<float> payload(stack.data.values().begin(), stack.data.values().end());
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("short write to " + path.string());

  nlohmann::json side;
  side["dims"] = stack.data.shape();
  side["dtype"] = "float32";
  side["order"] = "row-major";
  for (ChannelRole r : stack.roles) side["channel_roles"].push_back(to_string(r));
  std::ofstream js(path.string() + ".json", std::ios::trunc);
  if (!js) throw IoError("cannot write feature sidecar for " + path.string());
  js << side.dump(2) << "\n";
}

FeatureStack read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature dump " + path.string());
  char magic[4];
  std::uint32_t version = 0, rank = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&rank), sizeof rank);
  if (!in || std::memcmp(magic, "OSFT", 4) != 0 || version != 1 || rank > 8) {
    throw IoError("bad feature dump header in " + path.string());
  }
  nn::Shape shape(rank);
  for (auto& d : shape) {
    std::uint64_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), sizeof dim);
    d = static_cast<std::size_t>(dim);
  }
  std::vector<float> payload(nn::shape_numel(shape));
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!in) throw IoError("truncated feature dump " + path.string());
  FeatureStack stack{nn::Tensor(shape, std::vector<double>(payload.begin(), payload.end())), {}};
  std::ifstream js(path.string() + ".json");
  if (js) {
    auto side = nlohmann::json::parse(js);
    for (const auto& r : side.at("channel_roles")) stack.roles.push_back(role_from_string(r));
  }
  return stack;
}

}  // namespace osscl

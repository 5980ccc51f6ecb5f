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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "osscl/features.hpp"
#include "osscl/nn/layers.hpp"

namespace osscl {

enum class BackboneVariant { mobilefacenet, toy };

std::string to_string(BackboneVariant v);
BackboneVariant backbone_variant_from_string(const std::string& s);

struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t embedding_dim = 128;
  BackboneVariant variant = BackboneVariant::mobilefacenet;
  // Spatial size of the feature stack (mel bins x frames).
  std::size_t input_height = 128;
  std::size_t input_width = 313;
  // Channel widths of the three strided conv layers of the toy variant.
  std::vector<std::size_t> toy_widths{4, 8, 16};
  bool operator==(const BackboneConfig&) const = default;
};

// B x C x H x W feature stack -> B x E embedding.
class Backbone : public nn::Module {
 public:
  explicit Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {}
  virtual nn::Tensor forward(const nn::Tensor& x) = 0;
  const BackboneConfig& config() const { return cfg_; }

 protected:
  BackboneConfig cfg_;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, nn::Rng& rng);

// Checks the channel count before running the backbone.
nn::Tensor embed(Backbone& backbone, const FeatureStack& stack);

enum class FphActivation { leaky_relu, relu };

std::string to_string(FphActivation a);
FphActivation fph_activation_from_string(const std::string& s);

struct FphConfig {
  std::size_t reduction = 64;
  FphActivation activation = FphActivation::leaky_relu;
  double slope = 0.01;
  bool operator==(const FphConfig&) const = default;
};

// Feature Perturbation Head: affine E->R, activation, affine R->E, then L2
// normalization onto the unit sphere. Trained only through the contrastive
// loss; there is no reconstruction target.
class FeaturePerturbationHead : public nn::Module {
 public:
  FeaturePerturbationHead(std::size_t embedding_dim, const FphConfig& cfg, nn::Rng& rng);
  nn::Tensor forward(const nn::Tensor& emb) const;

  nn::Linear& encoder() { return *encoder_; }
  nn::Linear& decoder() { return *decoder_; }
  const FphConfig& config() const { return cfg_; }

 private:
  FphConfig cfg_;
  nn::Linear* encoder_;
  nn::Linear* decoder_;
};

struct ArcFaceConfig {
  double scale = 30.0;
  double margin = 0.7;  // radians
  bool operator==(const ArcFaceConfig&) const = default;
};

class ArcFaceHead : public nn::Module {
 public:
  ArcFaceHead(std::size_t num_classes, std::size_t embedding_dim, const ArcFaceConfig& cfg,
              nn::Rng& rng);

  std::size_t num_classes() const { return weight.size(0); }
  const ArcFaceConfig& config() const { return cfg_; }

  nn::Tensor weight;  // num_classes x E, normalized row-wise at use

 private:
  ArcFaceConfig cfg_;
};

// Scaled additive-angular-margin transform of a cosine matrix. Target entries
// become s*cos(theta+m) when cos(theta) > cos(pi-m), else s*(cos(theta) - m*sin m);
// everything else is s*cos(theta).
nn::Tensor arcface_margin(const nn::Tensor& cosine, std::span<const int> labels, double scale,
                          double margin, bool apply_margin);

// labels may be empty when apply_margin is false.
nn::Tensor arcface_logits(const nn::Tensor& emb, std::span<const int> labels,
                          const ArcFaceHead& head, bool apply_margin);

struct ModelConfig {
  FeatureMode feature_mode = FeatureMode::logmel;
  StftConfig stft;
  TgramConfig tgram;
  TfgramConfig tfgram;
  BackboneConfig backbone;
  std::optional<FphConfig> fph = FphConfig{};  // nullopt removes the head
  ArcFaceConfig arcface;
  std::size_t num_classes = 41;
  std::uint64_t init_seed = 0;
  bool operator==(const ModelConfig&) const = default;
};

// Log-Mel input, m = 0.7, leaky-ReLU FPH.
ModelConfig paper_logmel_config();
// Log-Mel + Tgram + TFgram input, m = 0.4, ReLU FPH.
ModelConfig paper_tfst_config();

// Front ends, backbone, FPH and ArcFace head behind one parameter registry.
class OsSclModel : public nn::Module {
 public:
  explicit OsSclModel(const ModelConfig& cfg);

  // waveforms may be undefined in logmel mode.
  FeatureStack features(const nn::Tensor& waveforms, const nn::Tensor& logmels);
  nn::Tensor embed(const FeatureStack& stack);
  // FPH output, or the plain normalized embedding when the head is removed.
  nn::Tensor perturb(const nn::Tensor& emb) const;

  const ModelConfig& config() const { return cfg_; }
  Backbone& backbone() { return *backbone_; }
  ArcFaceHead& head() { return *head_; }
  const ArcFaceHead& head() const { return *head_; }
  FeaturePerturbationHead* fph() { return fph_; }
  TgramNet* tgram() { return tgram_; }
  TfgramNet* tfgram() { return tfgram_; }

 private:
  ModelConfig cfg_;
  TgramNet* tgram_ = nullptr;
  TfgramNet* tfgram_ = nullptr;
  Backbone* backbone_ = nullptr;
  FeaturePerturbationHead* fph_ = nullptr;
  ArcFaceHead* head_ = nullptr;
};

// Exact number of trainable scalars.
std::size_t count_params(const nn::Module& module);

}  // namespace osscl

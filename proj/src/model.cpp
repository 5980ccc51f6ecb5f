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

#include "osscl/model.hpp"

#include <cmath>
#include <numbers>

#include "osscl/error.hpp"
#include "osscl/nn/ops.hpp"

namespace osscl {

std::string to_string(BackboneVariant v) {
  return v == BackboneVariant::mobilefacenet ? "mobilefacenet" : "toy";
}

BackboneVariant backbone_variant_from_string(const std::string& s) {
  if (s == "mobilefacenet") return BackboneVariant::mobilefacenet;
  if (s == "toy") return BackboneVariant::toy;
  throw InvalidArgument("unknown backbone variant '" + s + "' (expected mobilefacenet or toy)");
}

std::string to_string(FphActivation a) { return a == FphActivation::relu ? "relu" : "leaky_relu"; }

FphActivation fph_activation_from_string(const std::string& s) {
  if (s == "relu") return FphActivation::relu;
  if (s == "leaky_relu") return FphActivation::leaky_relu;
  throw InvalidArgument("unknown FPH activation '" + s + "' (expected relu or leaky_relu)");
}

namespace {

// conv (no bias) -> batch norm -> PReLU, the last step skipped when linear.
class ConvBnAct : public nn::Module {
 public:
  ConvBnAct(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, bool depthwise, bool linear, nn::Rng& rng) {
    nn::Conv2dOptions opt{stride, stride, pad, pad, depthwise ? in : 1};
    conv_ = &register_module("conv", std::make_unique<nn::Conv2d>(in, out, kh, kw, opt, false, rng));
    bn_ = &register_module("bn", std::make_unique<nn::BatchNorm>(out));
    if (!linear) act_ = &register_module("act", std::make_unique<nn::PReLU>(out));
  }

  nn::Tensor forward(const nn::Tensor& x) {
    nn::Tensor y = bn_->forward(conv_->forward(x));
    return act_ ? act_->forward(y) : y;
  }

 private:
  nn::Conv2d* conv_;
  nn::BatchNorm* bn_;
  nn::PReLU* act_ = nullptr;
};

// Inverted residual: 1x1 expand, 3x3 depthwise, linear 1x1 project.
class Bottleneck : public nn::Module {
 public:
  Bottleneck(std::size_t in, std::size_t out, std::size_t stride, std::size_t expansion,
             nn::Rng& rng)
      : residual_(stride == 1 && in == out) {
    const std::size_t hidden = in * expansion;
    expand_ = &register_module("expand",
                               std::make_unique<ConvBnAct>(in, hidden, 1, 1, 1, 0, false, false, rng));
    depthwise_ = &register_module(
        "depthwise", std::make_unique<ConvBnAct>(hidden, hidden, 3, 3, stride, 1, true, false, rng));
    project_ = &register_module("project",
                                std::make_unique<ConvBnAct>(hidden, out, 1, 1, 1, 0, false, true, rng));
  }

  nn::Tensor forward(const nn::Tensor& x) {
    nn::Tensor y = project_->forward(depthwise_->forward(expand_->forward(x)));
    return residual_ ? nn::add(x, y) : y;
  }

 private:
  bool residual_;
  ConvBnAct* expand_;
  ConvBnAct* depthwise_;
  ConvBnAct* project_;
};

class MobileFaceNet : public Backbone {
 public:
  MobileFaceNet(const BackboneConfig& cfg, nn::Rng& rng) : Backbone(cfg) {
    struct Stage {
      std::size_t expansion, channels, repeats, stride;
    };
    static constexpr Stage kStages[] = {{2, 128, 2, 2}, {4, 128, 2, 2}, {4, 128, 2, 2}};

    std::size_t h = nn::conv_output_length(cfg.input_height, 3, 2, 1);
    std::size_t w = nn::conv_output_length(cfg.input_width, 3, 2, 1);
    layers_.push_back(&register_module(
        "conv1", std::make_unique<ConvBnAct>(cfg.in_channels, 64, 3, 3, 2, 1, false, false, rng)));
    layers_.push_back(&register_module(
        "dw_conv1", std::make_unique<ConvBnAct>(64, 64, 3, 3, 1, 1, true, false, rng)));
    std::size_t in = 64;
    int index = 0;
    for (const auto& stage : kStages) {
      for (std::size_t r = 0; r < stage.repeats; ++r) {
        const std::size_t stride = r == 0 ? stage.stride : 1;
        blocks_.push_back(&register_module(
            "blocks." + std::to_string(index++),
            std::make_unique<Bottleneck>(in, stage.channels, stride, stage.expansion, rng)));
        in = stage.channels;
        h = nn::conv_output_length(h, 3, stride, 1);
        w = nn::conv_output_length(w, 3, stride, 1);
      }
    }
    if (h == 0 || w == 0) throw ShapeError("mobilefacenet: input too small");
    conv2_ = &register_module("conv2",
                              std::make_unique<ConvBnAct>(in, 512, 1, 1, 1, 0, false, false, rng));
    // Global depthwise conv over whatever spatial extent remains (8 x 20 at 128 x 313).
    gdconv_ = &register_module("linear7",
                               std::make_unique<ConvBnAct>(512, 512, h, w, 1, 0, true, true, rng));
    project_ = &register_module(
        "linear1", std::make_unique<ConvBnAct>(512, cfg.embedding_dim, 1, 1, 1, 0, false, true, rng));
  }

  nn::Tensor forward(const nn::Tensor& x) override {
    nn::Tensor y = x;
    for (auto* l : layers_) y = l->forward(y);
    for (auto* b : blocks_) y = b->forward(y);
    y = project_->forward(gdconv_->forward(conv2_->forward(y)));
    return y.reshape({y.size(0), y.size(1)});
  }

 private:
  std::vector<ConvBnAct*> layers_;
  std::vector<Bottleneck*> blocks_;
  ConvBnAct* conv2_;
  ConvBnAct* gdconv_;
  ConvBnAct* project_;
};

// Three strided conv-BN-PReLU layers, mean over time, linear projection of
// the (channel, frequency) map.
class ToyBackbone : public Backbone {
 public:
  ToyBackbone(const BackboneConfig& cfg, nn::Rng& rng) : Backbone(cfg) {
    if (cfg.toy_widths.size() != 3) throw InvalidArgument("toy backbone needs three widths");
    std::size_t in = cfg.in_channels;
    std::size_t h = cfg.input_height;
    for (std::size_t i = 0; i < cfg.toy_widths.size(); ++i) {
      layers_.push_back(&register_module(
          "conv" + std::to_string(i),
          std::make_unique<ConvBnAct>(in, cfg.toy_widths[i], 3, 3, 2, 1, false, false, rng)));
      in = cfg.toy_widths[i];
      h = nn::conv_output_length(h, 3, 2, 1);
    }
    head_ = &register_module("head",
                             std::make_unique<nn::Linear>(in * h, cfg.embedding_dim, true, rng));
  }

  nn::Tensor forward(const nn::Tensor& x) override {
    nn::Tensor y = x;
    for (auto* l : layers_) y = l->forward(y);
    y = nn::mean_last_axis(y);
    return head_->forward(y.reshape({y.size(0), y.size(1) * y.size(2)}));
  }

 private:
  std::vector<ConvBnAct*> layers_;
  nn::Linear* head_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, nn::Rng& rng) {
  if (cfg.in_channels == 0 || cfg.embedding_dim == 0) {
    throw InvalidArgument("backbone needs positive channel and embedding sizes");
  }
  if (cfg.variant == BackboneVariant::toy) return std::make_unique<ToyBackbone>(cfg, rng);
  return std::make_unique<MobileFaceNet>(cfg, rng);
}

nn::Tensor embed(Backbone& backbone, const FeatureStack& stack) {
  const auto& cfg = backbone.config();
  if (stack.data.dim() != 4 || stack.data.size(1) != cfg.in_channels) {
    throw ShapeError("embed: backbone expects " + std::to_string(cfg.in_channels) +
                     " channels, got stack " + nn::shape_string(stack.data.shape()));
  }
  if (stack.data.size(2) != cfg.input_height || stack.data.size(3) != cfg.input_width) {
    throw ShapeError("embed: backbone expects " + std::to_string(cfg.input_height) + "x" +
                     std::to_string(cfg.input_width) + " features, got " +
                     nn::shape_string(stack.data.shape()));
  }
  return backbone.forward(stack.data);
}

FeaturePerturbationHead::FeaturePerturbationHead(std::size_t embedding_dim, const FphConfig& cfg,
                                                 nn::Rng& rng)
    : cfg_(cfg) {
  if (cfg.reduction < 1 || cfg.reduction > embedding_dim) {
    throw InvalidArgument("FPH reduction " + std::to_string(cfg.reduction) +
                          " must lie in [1, " + std::to_string(embedding_dim) + "]");
  }
  encoder_ = &register_module("encoder",
                              std::make_unique<nn::Linear>(embedding_dim, cfg.reduction, true, rng));
  decoder_ = &register_module("decoder",
                              std::make_unique<nn::Linear>(cfg.reduction, embedding_dim, true, rng));
}

nn::Tensor FeaturePerturbationHead::forward(const nn::Tensor& emb) const {
  nn::Tensor h = encoder_->forward(emb);
  h = cfg_.activation == FphActivation::relu ? nn::relu(h) : nn::leaky_relu(h, cfg_.slope);
  return nn::l2_normalize_rows(decoder_->forward(h));
}

ArcFaceHead::ArcFaceHead(std::size_t num_classes, std::size_t embedding_dim,
                         const ArcFaceConfig& cfg, nn::Rng& rng)
    : cfg_(cfg) {
  if (num_classes == 0) throw InvalidArgument("ArcFace head needs at least one class");
  if (cfg.scale <= 0.0) throw InvalidArgument("ArcFace scale must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(num_classes + embedding_dim));
  weight = register_parameter("weight", nn::uniform_tensor({num_classes, embedding_dim}, bound, rng));
}

nn::Tensor arcface_margin(const nn::Tensor& cosine, std::span<const int> labels, double scale,
                          double margin, bool apply_margin) {
  const std::size_t rows = cosine.size(0), cols = cosine.size(1);
  if (apply_margin && labels.size() != rows) {
    throw InvalidArgument("arcface: expected " + std::to_string(rows) + " labels");
  }
  std::vector<int> targets(rows, -1);
  if (apply_margin) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) {
        throw InvalidArgument("arcface: label " + std::to_string(labels[r]) + " out of range [0, " +
                              std::to_string(cols) + ")");
      }
      targets[r] = labels[r];
    }
  }
  const double cos_m = std::cos(margin), sin_m = std::sin(margin);
  const double threshold = std::cos(std::numbers::pi - margin);
  const double fallback = margin * sin_m;
  std::vector<double> out(cosine.numel());
  std::vector<double> deriv(cosine.numel(), scale);
  auto cv = cosine.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const double cs = cv[i];
      if (static_cast<int>(c) != targets[r]) {
        out[i] = scale * cs;
      } else if (cs > threshold) {
        const double sine = std::sqrt(std::max(0.0, 1.0 - cs * cs));
        out[i] = scale * (cs * cos_m - sine * sin_m);
        deriv[i] = scale * (cos_m + cs * sin_m / std::max(sine, 1e-12));
      } else {
        out[i] = scale * (cs - fallback);
      }
    }
  }
  return nn::make_op_result(cosine.shape(), std::move(out), {cosine},
                            [deriv = std::move(deriv)](nn::Node& o) {
    auto& g = o.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += deriv[i] * o.grad[i];
  });
}

nn::Tensor arcface_logits(const nn::Tensor& emb, std::span<const int> labels,
                          const ArcFaceHead& head, bool apply_margin) {
  if (emb.dim() != 2 || emb.size(1) != head.weight.size(1)) {
    throw ShapeError("arcface: embedding " + nn::shape_string(emb.shape()) +
                     " does not match class weights " + nn::shape_string(head.weight.shape()));
  }
  nn::Tensor cosine = nn::matmul(nn::l2_normalize_rows(emb), nn::l2_normalize_rows(head.weight),
                                 /*transpose_b=*/true);
  return arcface_margin(cosine, labels, head.config().scale, head.config().margin, apply_margin);
}

ModelConfig paper_logmel_config() {
  ModelConfig cfg;
  cfg.feature_mode = FeatureMode::logmel;
  cfg.backbone.in_channels = 1;
  cfg.fph = FphConfig{64, FphActivation::leaky_relu, 0.01};
  cfg.arcface = {30.0, 0.7};
  return cfg;
}

ModelConfig paper_tfst_config() {
  ModelConfig cfg;
  cfg.feature_mode = FeatureMode::tfst;
  cfg.backbone.in_channels = 3;
  cfg.fph = FphConfig{64, FphActivation::relu, 0.01};
  cfg.arcface = {30.0, 0.4};
  return cfg;
}

OsSclModel::OsSclModel(const ModelConfig& cfg) : cfg_(cfg) {
  const std::size_t expected_channels = cfg.feature_mode == FeatureMode::tfst ? 3 : 1;
  if (cfg.backbone.in_channels != expected_channels) {
    throw InvalidArgument("backbone in_channels " + std::to_string(cfg.backbone.in_channels) +
                          " does not match feature mode " + to_string(cfg.feature_mode));
  }
  if (cfg.backbone.input_height != cfg.stft.n_mels || cfg.backbone.input_width != cfg.stft.frames()) {
    throw InvalidArgument("backbone input size does not match the log-Mel shape");
  }
  nn::Rng rng(cfg.init_seed);
  if (cfg.feature_mode == FeatureMode::tfst) {
    if (cfg.tgram.channels != cfg.stft.n_mels || cfg.tfgram.block_channels.back() != cfg.stft.n_mels ||
        cfg.tfgram.adaptive_sizes.back() != cfg.stft.frames()) {
      throw InvalidArgument("Tgram/TFgram output shape does not match the log-Mel shape");
    }
    tgram_ = &register_module("tgram", std::make_unique<TgramNet>(cfg.tgram, rng));
    tfgram_ = &register_module("tfgram", std::make_unique<TfgramNet>(cfg.tfgram, rng));
  }
  backbone_ = &register_module("backbone", make_backbone(cfg.backbone, rng));
  if (cfg.fph) {
    fph_ = &register_module("fph", std::make_unique<FeaturePerturbationHead>(
                                       cfg.backbone.embedding_dim, *cfg.fph, rng));
  }
  head_ = &register_module("head", std::make_unique<ArcFaceHead>(
                                       cfg.num_classes, cfg.backbone.embedding_dim, cfg.arcface, rng));
}

FeatureStack OsSclModel::features(const nn::Tensor& waveforms, const nn::Tensor& logmels) {
  if (cfg_.feature_mode == FeatureMode::logmel) {
    return stack_features(logmels, {}, {}, FeatureMode::logmel);
  }
  if (!waveforms.defined()) throw InvalidArgument("tfst features need waveforms");
  nn::Tensor tg = tgram_->forward(waveforms);
  nn::Tensor tf = tfgram_->forward(waveforms);
  return stack_features(logmels, tg, tf, FeatureMode::tfst);
}

nn::Tensor OsSclModel::embed(const FeatureStack& stack) { return osscl::embed(*backbone_, stack); }

nn::Tensor OsSclModel::perturb(const nn::Tensor& emb) const {
  return fph_ ? fph_->forward(emb) : nn::l2_normalize_rows(emb);
}

std::size_t count_params(const nn::Module& module) { return module.parameter_count(); }

}  // namespace osscl

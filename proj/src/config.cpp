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

#include "osscl/config.hpp"

#include <fstream>
#include <set>

#include "osscl/error.hpp"

namespace osscl {

using nlohmann::json;

std::string to_string(WeightSet w) { return w == WeightSet::raw ? "raw" : "ema"; }

WeightSet weight_set_from_string(const std::string& s) {
  if (s == "raw") return WeightSet::raw;
  if (s == "ema") return WeightSet::ema;
  throw InvalidArgument("unknown weight set '" + s + "' (expected raw or ema)");
}

namespace {

std::string to_string(AverageMode a) { return a == AverageMode::types ? "types" : "ids"; }

AverageMode average_mode_from_string(const std::string& s) {
  if (s == "types") return AverageMode::types;
  if (s == "ids") return AverageMode::ids;
  throw InvalidArgument("unknown average mode '" + s + "' (expected types or ids)");
}

// Reads keys of one object and rejects whatever was not asked for.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (root.contains(name)) {
      node_ = &root.at(name);
      if (!node_->is_object()) throw InvalidArgument("config section '" + name + "' must be an object");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument("config key " + name_ + "." + key + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return node_ && node_->contains(key); }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return node_->at(key);
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.contains(key)) throw InvalidArgument("unknown config key " + name_ + "." + key);
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

void sync_derived_fields(RunConfig& cfg) {
  auto& m = cfg.model;
  m.backbone.in_channels = m.feature_mode == FeatureMode::tfst ? 3 : 1;
  m.backbone.input_height = m.stft.n_mels;
  m.backbone.input_width = m.stft.frames();
}

json to_json(const RunConfig& cfg) {
  const auto& m = cfg.model;
  json j;
  j["stft"] = {{"n_fft", m.stft.n_fft},         {"hop", m.stft.hop},
               {"n_mels", m.stft.n_mels},       {"sample_rate", m.stft.sample_rate},
               {"eps", m.stft.eps},             {"f_min", m.stft.f_min},
               {"f_max", m.stft.f_max},         {"clip_length", m.stft.clip_length}};
  j["tgram"] = {{"channels", m.tgram.channels}, {"kernel", m.tgram.kernel},
                {"stride", m.tgram.stride},     {"padding", m.tgram.padding},
                {"blocks", m.tgram.blocks},     {"slope", m.tgram.slope}};
  j["tfgram"] = {{"stem_channels", m.tfgram.stem_channels},
                 {"stem_kernel", m.tfgram.stem_kernel},
                 {"stem_stride", m.tfgram.stem_stride},
                 {"stem_padding", m.tfgram.stem_padding},
                 {"block_channels", m.tfgram.block_channels},
                 {"first_pool", m.tfgram.first_pool},
                 {"adaptive_sizes", m.tfgram.adaptive_sizes}};
  j["model"] = {{"feature_mode", to_string(m.feature_mode)},
                {"backbone", to_string(m.backbone.variant)},
                {"embedding_dim", m.backbone.embedding_dim},
                {"toy_widths", m.backbone.toy_widths},
                {"fph_reduction", m.fph ? json(m.fph->reduction) : json("none")},
                {"fph_activation", to_string(m.fph ? m.fph->activation : FphActivation::leaky_relu)},
                {"fph_slope", m.fph ? m.fph->slope : 0.01},
                {"arcface_scale", m.arcface.scale},
                {"arcface_margin", m.arcface.margin}};
  j["losses"] = {{"temperature", cfg.contrastive.temperature},
                 {"supcon_reduction", to_string(cfg.contrastive.reduction)}};
  const auto& t = cfg.training;
  j["training"] = {{"epochs", t.epochs},         {"batch_size", t.batch_size},
                   {"lr0", t.lr0},               {"eta_min", t.eta_min},
                   {"weight_decay", t.weight_decay}, {"beta1", t.beta1},
                   {"beta2", t.beta2},           {"adam_eps", t.adam_eps},
                   {"ema_decay", t.ema_decay},   {"ema_warmup", t.ema_warmup},
                   {"seed", t.seed},             {"workers", t.workers}};
  j["eval"] = {{"weights", to_string(cfg.eval.weights)},
               {"pauc_p", cfg.eval.pauc_p},
               {"average", to_string(cfg.eval.average)}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  static const std::set<std::string> kSections{"stft",   "tgram",    "tfgram", "model",
                                               "losses", "training", "eval",   "paths"};
  for (const auto& [key, value] : j.items()) {
    if (!kSections.contains(key)) throw InvalidArgument("unknown config section '" + key + "'");
  }
  // "paths" is written by the CLI for provenance and ignored on input.
  if (j.contains("paths") && !j.at("paths").is_object()) {
    throw InvalidArgument("config section 'paths' must be an object");
  }
  RunConfig cfg;
  auto& m = cfg.model;

  Section stft(j, "stft");
  stft.get("n_fft", m.stft.n_fft);
  stft.get("hop", m.stft.hop);
  stft.get("n_mels", m.stft.n_mels);
  stft.get("sample_rate", m.stft.sample_rate);
  stft.get("eps", m.stft.eps);
  stft.get("f_min", m.stft.f_min);
  stft.get("f_max", m.stft.f_max);
  stft.get("clip_length", m.stft.clip_length);
  stft.finish();

  Section tgram(j, "tgram");
  tgram.get("channels", m.tgram.channels);
  tgram.get("kernel", m.tgram.kernel);
  tgram.get("stride", m.tgram.stride);
  tgram.get("padding", m.tgram.padding);
  tgram.get("blocks", m.tgram.blocks);
  tgram.get("slope", m.tgram.slope);
  tgram.finish();

  Section tfgram(j, "tfgram");
  tfgram.get("stem_channels", m.tfgram.stem_channels);
  tfgram.get("stem_kernel", m.tfgram.stem_kernel);
  tfgram.get("stem_stride", m.tfgram.stem_stride);
  tfgram.get("stem_padding", m.tfgram.stem_padding);
  tfgram.get("block_channels", m.tfgram.block_channels);
  tfgram.get("first_pool", m.tfgram.first_pool);
  tfgram.get("adaptive_sizes", m.tfgram.adaptive_sizes);
  tfgram.finish();

  Section model(j, "model");
  std::string mode = to_string(m.feature_mode);
  model.get("feature_mode", mode);
  m.feature_mode = feature_mode_from_string(mode);
  // Mode-dependent defaults first, so explicit keys below win.
  const ModelConfig preset =
      m.feature_mode == FeatureMode::tfst ? paper_tfst_config() : paper_logmel_config();
  m.fph = preset.fph;
  m.arcface = preset.arcface;
  std::string variant = to_string(m.backbone.variant);
  model.get("backbone", variant);
  m.backbone.variant = backbone_variant_from_string(variant);
  model.get("embedding_dim", m.backbone.embedding_dim);
  model.get("toy_widths", m.backbone.toy_widths);
  if (model.has("fph_reduction")) {
    const json& r = model.raw("fph_reduction");
    if (r.is_string() && r.get<std::string>() == "none") {
      m.fph.reset();
    } else if (r.is_number_unsigned() || (r.is_number_integer() && r.get<long long>() > 0)) {
      m.fph = FphConfig{r.get<std::size_t>(), preset.fph->activation, preset.fph->slope};
    } else {
      throw InvalidArgument("config key model.fph_reduction must be a positive integer or \"none\"");
    }
  }
  std::string activation = to_string(preset.fph->activation);
  model.get("fph_activation", activation);
  double slope = preset.fph->slope;
  model.get("fph_slope", slope);
  if (m.fph) {
    m.fph->activation = fph_activation_from_string(activation);
    m.fph->slope = slope;
  }
  model.get("arcface_scale", m.arcface.scale);
  model.get("arcface_margin", m.arcface.margin);
  model.finish();

  Section losses(j, "losses");
  losses.get("temperature", cfg.contrastive.temperature);
  std::string reduction = to_string(cfg.contrastive.reduction);
  losses.get("supcon_reduction", reduction);
  cfg.contrastive.reduction = supcon_reduction_from_string(reduction);
  losses.finish();

  auto& t = cfg.training;
  Section training(j, "training");
  training.get("epochs", t.epochs);
  training.get("batch_size", t.batch_size);
  training.get("lr0", t.lr0);
  training.get("eta_min", t.eta_min);
  training.get("weight_decay", t.weight_decay);
  training.get("beta1", t.beta1);
  training.get("beta2", t.beta2);
  training.get("adam_eps", t.adam_eps);
  training.get("ema_decay", t.ema_decay);
  training.get("ema_warmup", t.ema_warmup);
  training.get("seed", t.seed);
  training.get("workers", t.workers);
  training.finish();

  Section eval(j, "eval");
  std::string weights = to_string(cfg.eval.weights);
  eval.get("weights", weights);
  cfg.eval.weights = weight_set_from_string(weights);
  eval.get("pauc_p", cfg.eval.pauc_p);
  std::string average = to_string(cfg.eval.average);
  eval.get("average", average);
  cfg.eval.average = average_mode_from_string(average);
  eval.finish();

  if (!(t.ema_decay >= 0.0 && t.ema_decay <= 1.0)) throw InvalidArgument("ema_decay must lie in [0, 1]");
  if (!(cfg.contrastive.temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (!(cfg.eval.pauc_p > 0.0 && cfg.eval.pauc_p <= 1.0)) throw InvalidArgument("pauc_p must lie in (0, 1]");
  sync_derived_fields(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace osscl

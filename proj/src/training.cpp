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

#include "osscl/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "osscl/augment.hpp"
#include "osscl/checkpoint.hpp"
#include "osscl/config.hpp"
#include "osscl/error.hpp"
#include "osscl/losses.hpp"
#include "osscl/nn/optim.hpp"

namespace osscl {

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0, double eta_min) {
  if (total_steps == 0) throw InvalidArgument("cosine_lr needs total_steps > 0");
  if (step > total_steps) throw InvalidArgument("cosine_lr step beyond schedule");
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(phase));
}

EmaState::EmaState(const nn::Module& model, double decay_, bool warmup_)
    : decay(decay_), warmup(warmup_) {
  for (const auto& [name, t] : model.named_parameters()) params.emplace_back(name, t.detach());
  for (const auto& [name, t] : model.named_buffers()) buffers.emplace_back(name, t.detach());
}

void ema_update(EmaState& ema, const std::vector<nn::NamedTensor>& params, double decay) {
  if (params.size() != ema.params.size()) {
    throw ShapeError("EMA holds " + std::to_string(ema.params.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nn::Tensor& p = params[i].second;
    nn::Tensor& s = ema.params[i].second;
    if (p.shape() != s.shape()) {
      throw ShapeError("EMA shape mismatch for " + params[i].first + ": " +
                       nn::shape_string(s.shape()) + " vs " + nn::shape_string(p.shape()));
    }
    auto sv = s.values();
    const auto pv = p.values();
    for (std::size_t k = 0; k < sv.size(); ++k) sv[k] = decay * sv[k] + (1.0 - decay) * pv[k];
  }
}

void ema_update(EmaState& ema, const nn::Module& model) {
  double decay = ema.decay;
  if (ema.warmup) {
    const double t = static_cast<double>(ema.updates);
    decay = std::min(decay, (1.0 + t) / (10.0 + t));
  }
  ema_update(ema, model.named_parameters(), decay);
  const auto buffers = model.named_buffers();
  if (buffers.size() != ema.buffers.size()) throw ShapeError("EMA buffer count mismatch");
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    const auto src = buffers[i].second.values();
    auto dst = ema.buffers[i].second.values();
    if (src.size() != dst.size()) throw ShapeError("EMA buffer shape mismatch for " + buffers[i].first);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  ++ema.updates;
}

namespace {

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"loss_total", r.loss_total},
          {"loss_supcon", r.loss_supcon},
          {"loss_namix", r.loss_namix},
          {"wall_time", r.wall_time}};
}

std::mt19937_64 batch_rng(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index),
                    0x6d697875u};
  return std::mt19937_64(seq);
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const RunConfig& run,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  if (manifest.split(Split::train).empty()) throw InvalidArgument("manifest has no training clips");
  if (manifest.num_classes() < 2) {
    throw InvalidArgument("training needs at least two machine IDs, got " +
                          std::to_string(manifest.num_classes()));
  }
  RunConfig cfg = run;
  sync_derived_fields(cfg);
  cfg.model.num_classes = static_cast<std::size_t>(manifest.num_classes());
  cfg.model.init_seed = cfg.training.seed;
  const TrainConfig& tc = cfg.training;

  std::filesystem::create_directories(out_dir);
  OsSclModel model(cfg.model);
  model.set_training(true);

  nn::AdamWOptions adam;
  adam.beta1 = tc.beta1;
  adam.beta2 = tc.beta2;
  adam.eps = tc.adam_eps;
  adam.weight_decay = tc.weight_decay;
  nn::AdamW optimizer(model.parameters(), adam);
  EmaState ema(model, tc.ema_decay, tc.ema_warmup);

  BatchOptions bopts;
  bopts.batch_size = tc.batch_size;
  bopts.seed = tc.seed;
  bopts.load_waveforms = cfg.model.feature_mode == FeatureMode::tfst;
  bopts.stft = cfg.model.stft;
  bopts.workers = tc.workers;
  const BatchStream stream(manifest, bopts);

  TrainResult result;
  std::ofstream log(out_dir / "train_log.jsonl");
  if (!log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tc.epochs, tc.lr0, tc.eta_min);
    double sum_total = 0.0, sum_supcon = 0.0, sum_namix = 0.0;
    const std::size_t n_batches = stream.batches_per_epoch();
    for (std::size_t b = 0; b < n_batches; ++b) {
      const Batch batch = stream.batch(epoch, b);
      auto rng = batch_rng(tc.seed, epoch, b);
      const double lambda = sample_lambda(rng);
      const auto perm = sample_permutation(batch.size(), rng);
      const MixedBatch mixed = mixup_batch(batch, lambda, perm);

      const FeatureStack stack = model.features(mixed.waveforms, mixed.logmels);
      const nn::Tensor emb = model.embed(stack);
      const nn::Tensor z = model.perturb(emb);
      const LossParts parts =
          total_loss(z, emb, mixed.y_a, mixed.y_b, lambda, model.head(), cfg.contrastive);
      const double total = parts.total.item();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch + 1 << ", batch " << b + 1
            << ": supcon=" << parts.supcon.item() << " namix=" << parts.namix.item()
            << " lambda=" << lambda << " lr=" << lr;
        throw NumericError(msg.str());
      }
      optimizer.zero_grad();
      parts.total.backward();
      optimizer.step(lr);
      ema_update(ema, model);
      ++result.steps;

      sum_total += total;
      sum_supcon += parts.supcon.item();
      sum_namix += parts.namix.item();
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.loss_total = sum_total / static_cast<double>(n_batches);
    rec.loss_supcon = sum_supcon / static_cast<double>(n_batches);
    rec.loss_namix = sum_namix / static_cast<double>(n_batches);
    rec.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << to_json(rec).dump() << '\n';
    log.flush();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  result.ema_updates = ema.updates;
  result.checkpoint = out_dir / "checkpoint.bin";
  save_checkpoint(result.checkpoint,
                  make_checkpoint(model, ema, cfg, manifest.class_map(), result.steps));
  return result;
}

}  // namespace osscl

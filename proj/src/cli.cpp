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

#include "osscl/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "osscl/checkpoint.hpp"
#include "osscl/error.hpp"
#include "osscl/training.hpp"

namespace osscl {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::optional<std::size_t>> parse_reductions(const std::string& list) {
  std::vector<std::optional<std::size_t>> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    const std::string tok = list.substr(start, end - start);
    if (tok == "none") {
      out.emplace_back(std::nullopt);
    } else {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (tok.empty() || used != tok.size() || v <= 0) {
        throw InvalidArgument("invalid FPH reduction '" + tok + "' (expected a positive integer or none)");
      }
      out.emplace_back(static_cast<std::size_t>(v));
    }
    start = end + 1;
  }
  return out;
}

namespace {

std::string reduction_label(const std::optional<std::size_t>& r) {
  return r ? std::to_string(*r) : std::string("none");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("config file not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

EpochCallback progress_printer(std::size_t epochs, const std::string& prefix) {
  return [epochs, prefix](const EpochRecord& r) {
    std::fprintf(stderr, "%sepoch %zu/%zu lr=%.3g loss=%.5f (supcon %.5f, namix %.5f) %.1fs\n",
                 prefix.c_str(), r.epoch, epochs, r.lr, r.loss_total, r.loss_supcon, r.loss_namix,
                 r.wall_time);
  };
}

// Flags shared by train and ablate-fph. Each one, when given, overrides the
// corresponding key of the config file.
struct TrainFlags {
  std::string config;
  std::string data_root;
  std::string out;
  std::optional<std::string> feature;
  std::optional<std::string> backbone;
  std::optional<std::string> fph_reduction;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> workers;
  std::optional<double> lr;
  std::optional<double> margin;
  std::optional<double> temperature;
  std::optional<double> ema_decay;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run config");
    cmd->add_option("--data-root", data_root, "dataset root (<type>/train, <type>/test)")->required();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--feature", feature, "logmel or tfst");
    cmd->add_option("--backbone", backbone, "mobilefacenet or toy");
    cmd->add_option("--fph-reduction", fph_reduction, "FPH bottleneck width or none");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--workers", workers, "clip decoding threads");
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--margin", margin, "ArcFace margin in radians");
    cmd->add_option("--temperature", temperature, "contrastive temperature");
    cmd->add_option("--ema-decay", ema_decay);
    cmd->add_option("--seed", seed, "overrides the config; OSSCL_SEED applies when neither sets one");
    cmd->add_flag("--quiet", quiet, "suppress per-epoch progress");
  }

  RunConfig resolve() const {
    json j = config.empty() ? json::object() : read_json(config);
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    auto set = [&j](const char* section, const char* key, json value) {
      j[section][key] = std::move(value);
    };
    if (feature) set("model", "feature_mode", *feature);
    if (backbone) set("model", "backbone", *backbone);
    if (fph_reduction) {
      if (*fph_reduction == "none") {
        set("model", "fph_reduction", "none");
      } else {
        const auto parsed = parse_reductions(*fph_reduction);
        if (parsed.size() != 1) throw InvalidArgument("--fph-reduction takes a single value");
        set("model", "fph_reduction", *parsed.front());
      }
    }
    if (epochs) set("training", "epochs", *epochs);
    if (batch_size) set("training", "batch_size", *batch_size);
    if (workers) set("training", "workers", *workers);
    if (lr) set("training", "lr0", *lr);
    if (ema_decay) set("training", "ema_decay", *ema_decay);
    if (margin) set("model", "arcface_margin", *margin);
    if (temperature) set("losses", "temperature", *temperature);
    const bool config_has_seed = j.contains("training") && j["training"].is_object() &&
                                 j["training"].contains("seed");
    if (seed) {
      set("training", "seed", *seed);
    } else if (!config_has_seed) {
      if (const char* env = std::getenv("OSSCL_SEED")) {
        try {
          set("training", "seed", std::stoull(env));
        } catch (const std::exception&) {
          throw InvalidArgument(std::string("OSSCL_SEED is not an integer: ") + env);
        }
      }
    }
    return run_config_from_json(j);
  }
};

json with_paths(json j, const json& paths) {
  j["paths"] = paths;
  return j;
}

int cmd_synth(const SynthOptions& opts, const std::string& out) {
  const DatasetManifest manifest = synth_generate(opts, out);
  write_json(fs::path(out) / "effective_config.json",
             {{"synth",
               {{"ids", opts.n_ids},
                {"clips_per_id", opts.clips_per_id},
                {"test_clips_per_id", opts.test_clips_per_id},
                {"seed", opts.seed},
                {"machine_type", opts.machine_type},
                {"clip_length", opts.clip_length}}},
              {"paths", {{"out", out}}}});
  std::printf("wrote %zu clips for %d machine ids under %s\n", manifest.clips().size(),
              manifest.num_classes(), out.c_str());
  return 0;
}

int cmd_train(const TrainFlags& flags) {
  RunConfig cfg = flags.resolve();
  const DatasetManifest manifest = scan_dataset(flags.data_root);
  fs::create_directories(flags.out);
  sync_derived_fields(cfg);
  write_json(fs::path(flags.out) / "effective_config.json",
             with_paths(to_json(cfg), {{"data_root", flags.data_root}, {"out", flags.out}}));
  const auto result = train(manifest, cfg, flags.out,
                            flags.quiet ? EpochCallback{} : progress_printer(cfg.training.epochs, ""));
  std::printf("checkpoint: %s (%zu steps)\n", result.checkpoint.string().c_str(), result.steps);
  return 0;
}

struct EvalFlags {
  std::string checkpoint;
  std::string data_root;
  std::string out;
  std::optional<std::string> weights;
  std::optional<double> pauc_p;
  std::optional<std::string> average;
};

int cmd_eval(const EvalFlags& flags) {
  const Checkpoint ckpt = load_checkpoint(flags.checkpoint);
  RunConfig cfg = ckpt.config;
  if (flags.weights) cfg.eval.weights = weight_set_from_string(*flags.weights);
  if (flags.pauc_p) cfg.eval.pauc_p = *flags.pauc_p;
  if (flags.average) {
    if (*flags.average == "types") cfg.eval.average = AverageMode::types;
    else if (*flags.average == "ids") cfg.eval.average = AverageMode::ids;
    else throw InvalidArgument("--average must be types or ids");
  }
  if (!(cfg.eval.pauc_p > 0.0 && cfg.eval.pauc_p <= 1.0)) throw InvalidArgument("--pauc-p must lie in (0, 1]");
  const DatasetManifest manifest = scan_dataset(flags.data_root);
  const fs::path out(flags.out);
  fs::create_directories(out);
  json effective = to_json(cfg);
  effective["paths"] = {{"checkpoint", flags.checkpoint}, {"data_root", flags.data_root}, {"out", flags.out}};
  write_json(out / "effective_config.json", effective);

  std::vector<ScoredClip> scores;
  const EvalReport report = evaluate(ckpt, manifest, cfg.eval, &scores);
  write_scores_csv(out / "scores.csv", scores);
  write_report_csv(out / "report.csv", report);
  write_json(out / "report.json", to_json(report));
  std::fputs(format_report(report).c_str(), stdout);
  return 0;
}

struct ScoreFlags {
  std::string checkpoint;
  std::vector<std::string> wavs;
  std::string id;
  std::optional<std::string> weights;
  std::string out;
};

int cmd_score(const ScoreFlags& flags) {
  const Checkpoint ckpt = load_checkpoint(flags.checkpoint);
  const MachineKey key = machine_key_from_string(flags.id);
  if (!ckpt.class_map.contains(key)) {
    throw NotFound("machine " + flags.id + " is not in the checkpoint class map");
  }
  const WeightSet weights = flags.weights ? weight_set_from_string(*flags.weights) : ckpt.config.eval.weights;
  if (!flags.out.empty()) {
    fs::create_directories(flags.out);
    RunConfig cfg = ckpt.config;
    cfg.eval.weights = weights;
    write_json(fs::path(flags.out) / "effective_config.json",
               with_paths(to_json(cfg), {{"checkpoint", flags.checkpoint}, {"wav", flags.wavs}, {"id", flags.id}}));
  }
  const AnomalyScorer scorer(ckpt, weights);
  for (const auto& wav : flags.wavs) {
    if (!fs::exists(wav)) throw NotFound("wav file not found: " + wav);
    ClipMetadata meta;
    meta.machine_type = key.machine_type;
    meta.machine_id = key.machine_id;
    meta.path = wav;
    const AudioClip clip = load_clip(meta, ckpt.config.model.stft.clip_length);
    std::printf("%.10g\n", scorer.score(clip.samples, key));
  }
  return 0;
}

int cmd_ablate(const TrainFlags& flags, const std::string& reductions_arg) {
  const auto reductions = parse_reductions(reductions_arg);
  RunConfig cfg = flags.resolve();
  for (const auto& r : reductions) {
    if (r && *r > cfg.model.backbone.embedding_dim) {
      throw InvalidArgument("FPH reduction " + std::to_string(*r) + " exceeds embedding dim " +
                            std::to_string(cfg.model.backbone.embedding_dim));
    }
  }
  const DatasetManifest manifest = scan_dataset(flags.data_root);
  fs::create_directories(flags.out);
  write_json(fs::path(flags.out) / "effective_config.json",
             with_paths(to_json(cfg), {{"data_root", flags.data_root},
                                       {"out", flags.out},
                                       {"reductions", reductions_arg}}));
  const auto cols = ablate_fph(manifest, cfg, reductions, flags.out, !flags.quiet);
  write_ablation_csv(fs::path(flags.out) / "ablation.csv", cols);
  std::ifstream table(fs::path(flags.out) / "ablation.csv");
  std::cout << table.rdbuf();
  return 0;
}

}  // namespace

std::vector<AblationColumn> ablate_fph(const DatasetManifest& manifest, const RunConfig& base,
                                       const std::vector<std::optional<std::size_t>>& reductions,
                                       const fs::path& out_dir, bool verbose) {
  if (reductions.empty()) throw InvalidArgument("no FPH reductions given");
  const FphActivation activation = base.model.fph ? base.model.fph->activation : FphActivation::leaky_relu;
  const double slope = base.model.fph ? base.model.fph->slope : 0.01;
  std::vector<AblationColumn> cols;
  for (const auto& r : reductions) {
    RunConfig cfg = base;
    if (r) {
      cfg.model.fph = FphConfig{*r, activation, slope};
    } else {
      cfg.model.fph.reset();
    }
    const std::string label = reduction_label(r);
    const auto result = train(manifest, cfg, out_dir / ("fph_" + label),
                              verbose ? progress_printer(cfg.training.epochs, "[R=" + label + "] ")
                                      : EpochCallback{});
    const Checkpoint ckpt = load_checkpoint(result.checkpoint);
    cols.push_back({r, evaluate(ckpt, manifest, cfg.eval)});
  }
  return cols;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationColumn>& cols) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  std::set<std::string> types;
  out << "machine_type";
  for (const auto& c : cols) {
    out << ',' << reduction_label(c.reduction);
    for (const auto& t : c.report.types) types.insert(t.machine_type);
  }
  out << '\n';
  char buf[32];
  for (const auto& type : types) {
    out << type;
    for (const auto& c : cols) {
      out << ',';
      for (const auto& t : c.report.types) {
        if (t.machine_type != type) continue;
        std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * t.auc);
        out << buf;
      }
    }
    out << '\n';
  }
  out << "Average";
  for (const auto& c : cols) {
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * c.report.average_auc);
    out << ',' << buf;
  }
  out << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"One-stage supervised contrastive learning for anomalous sound detection"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::string synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic machine-sound corpus");
  synth_cmd->add_option("--out", synth_out, "output root")->required();
  synth_cmd->add_option("--ids", synth.n_ids, "number of machine ids");
  synth_cmd->add_option("--clips-per-id", synth.clips_per_id, "normal training clips per id");
  synth_cmd->add_option("--test-clips-per-id", synth.test_clips_per_id, "test clips per id, half anomalous");
  synth_cmd->add_option("--machine-type", synth.machine_type);
  synth_cmd->add_option("--seed", synth_seed, "falls back to OSSCL_SEED, then 7");

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_flags.attach(train_cmd);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "score the test split and write reports");
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint)->required();
  eval_cmd->add_option("--data-root", eval_flags.data_root)->required();
  eval_cmd->add_option("--out", eval_flags.out)->required();
  eval_cmd->add_option("--weights", eval_flags.weights, "raw or ema");
  eval_cmd->add_option("--pauc-p", eval_flags.pauc_p, "upper FPR bound of pAUC");
  eval_cmd->add_option("--average", eval_flags.average, "average over types or ids");

  ScoreFlags score_flags;
  auto* score_cmd = app.add_subcommand("score", "print the anomaly score of wav files");
  score_cmd->add_option("--checkpoint", score_flags.checkpoint)->required();
  score_cmd->add_option("--wav", score_flags.wavs, "one or more wav files")->required();
  score_cmd->add_option("--id", score_flags.id, "claimed machine, e.g. fan/1")->required();
  score_cmd->add_option("--weights", score_flags.weights, "raw or ema");
  score_cmd->add_option("--out", score_flags.out, "directory for effective_config.json");

  TrainFlags ablate_flags;
  std::string reductions = "none,128,64,32,16,8,4";
  auto* ablate_cmd = app.add_subcommand("ablate-fph", "train one model per FPH reduction");
  ablate_flags.attach(ablate_cmd);
  ablate_cmd->add_option("--reductions", reductions, "comma-separated widths, none removes the head");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) {
      if (synth_seed) {
        synth.seed = *synth_seed;
      } else if (const char* env = std::getenv("OSSCL_SEED")) {
        try {
          synth.seed = std::stoull(env);
        } catch (const std::exception&) {
          throw InvalidArgument(std::string("OSSCL_SEED is not an integer: ") + env);
        }
      }
      return cmd_synth(synth, synth_out);
    }
    if (*train_cmd) return cmd_train(train_flags);
    if (*eval_cmd) return cmd_eval(eval_flags);
    if (*score_cmd) return cmd_score(score_flags);
    if (*ablate_cmd) return cmd_ablate(ablate_flags, reductions);
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NotFound& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

}  // namespace osscl

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

#include "osscl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "osscl/error.hpp"
#include "osscl/nn/ops.hpp"

namespace osscl {

namespace {

constexpr std::size_t kScoreChunk = 16;

struct Counts {
  std::size_t pos = 0;  // anomalies
  std::size_t neg = 0;  // normals
};

Counts check_inputs(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) {
    throw InvalidArgument("scores and labels differ in length (" + std::to_string(scores.size()) +
                          " vs " + std::to_string(labels.size()) + ")");
  }
  Counts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("non-finite anomaly score");
    (labels[i] == Label::anomaly ? c.pos : c.neg)++;
  }
  if (c.pos == 0 || c.neg == 0) throw InvalidArgument("AUC needs both normal and anomalous clips");
  return c;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

double score_from_logits(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw InvalidArgument("class index out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return -(logits[static_cast<std::size_t>(target)] - mx - std::log(sum));
}

AnomalyScorer::AnomalyScorer(const Checkpoint& ckpt, WeightSet weights)
    : class_map_(ckpt.class_map),
      model_(instantiate(ckpt, weights)),
      extractor_(std::make_unique<LogMelExtractor>(ckpt.config.model.stft)) {}

AnomalyScorer::~AnomalyScorer() = default;

double AnomalyScorer::score(std::span<const float> samples, const MachineKey& claimed) const {
  AudioClip clip;
  clip.samples.assign(samples.begin(), samples.end());
  clip.meta.machine_type = claimed.machine_type;
  clip.meta.machine_id = claimed.machine_id;
  return score_chunk(std::span<const AudioClip>(&clip, 1)).front();
}

std::vector<double> AnomalyScorer::score(std::span<const AudioClip> clips) const {
  std::vector<double> out;
  out.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); i += kScoreChunk) {
    const auto part = score_chunk(clips.subspan(i, std::min(kScoreChunk, clips.size() - i)));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<double> AnomalyScorer::score_chunk(std::span<const AudioClip> clips) const {
  const ModelConfig& mc = model_->config();
  const std::size_t B = clips.size();
  const std::size_t L = mc.stft.clip_length;
  const std::size_t M = mc.stft.n_mels;
  const std::size_t N = mc.stft.frames();

  std::vector<int> targets(B);
  for (std::size_t b = 0; b < B; ++b) {
    const MachineKey key = clips[b].meta.key();
    const auto it = class_map_.find(key);
    if (it == class_map_.end()) {
      throw NotFound("machine " + to_string(key) + " is not in the checkpoint class map");
    }
    targets[b] = it->second;
  }

  nn::NoGradGuard no_grad;
  nn::Tensor logmels({B, M, N});
  nn::Tensor waveforms;
  if (mc.feature_mode == FeatureMode::tfst) waveforms = nn::Tensor({B, L});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = clips[b].samples;
    if (s.size() != L) {
      throw ShapeError("clip has " + std::to_string(s.size()) + " samples, model expects " +
                       std::to_string(L));
    }
    const auto lm = extractor_->compute(std::span<const float>(s));
    std::copy(lm.begin(), lm.end(), logmels.values().begin() + static_cast<std::ptrdiff_t>(b * M * N));
    if (waveforms.defined()) {
      std::copy(s.begin(), s.end(), waveforms.values().begin() + static_cast<std::ptrdiff_t>(b * L));
    }
  }
  const nn::Tensor emb = model_->embed(model_->features(waveforms, logmels));
  const nn::Tensor logits = arcface_logits(emb, targets, model_->head(), false);
  const std::size_t K = logits.size(1);
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    out[b] = score_from_logits(logits.values().subspan(b * K, K), targets[b]);
    if (!std::isfinite(out[b])) throw NumericError("non-finite anomaly score for " + clips[b].meta.path);
  }
  return out;
}

double auc(std::span<const double> scores, std::span<const Label> labels) {
  const Counts c = check_inputs(scores, labels);
  // Rank-sum form with midranks; equal to the pairwise count with half
  // credit for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == Label::anomaly) rank_sum += midrank;
    }
    i = j;
  }
  const double pos = static_cast<double>(c.pos);
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * static_cast<double>(c.neg));
}

double pauc(std::span<const double> scores, std::span<const Label> labels, double p,
            bool standardized) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("pAUC range p must lie in (0, 1]");
  const Counts c = check_inputs(scores, labels);
  if (std::floor(p * static_cast<double>(c.neg)) < 1.0) {
    throw InvalidArgument("pAUC with p=" + std::to_string(p) + " needs at least " +
                          std::to_string(static_cast<int>(std::ceil(1.0 / p))) + " normal clips, got " +
                          std::to_string(c.neg));
  }
  // The whole ROC area is the AUC and both normalizations are the identity.
  if (p == 1.0) return auc(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double area = 0.0;
  double x0 = 0.0, y0 = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == Label::anomaly ? tp : fp)++;
      ++j;
    }
    i = j;
    const double x1 = static_cast<double>(fp) / static_cast<double>(c.neg);
    const double y1 = static_cast<double>(tp) / static_cast<double>(c.pos);
    if (x1 >= p) {
      const double y_at_p = x1 > x0 ? y0 + (y1 - y0) * (p - x0) / (x1 - x0) : y1;
      area += 0.5 * (y0 + y_at_p) * (p - x0);
      break;
    }
    area += 0.5 * (y0 + y1) * (x1 - x0);
    x0 = x1;
    y0 = y1;
  }
  if (!standardized) return area / p;
  const double min_area = 0.5 * p * p;
  return 0.5 * (1.0 + (area - min_area) / (p - min_area));
}

double mauc(const std::map<int, double>& per_id_auc) {
  if (per_id_auc.empty()) throw InvalidArgument("mAUC of an empty set");
  double m = std::numeric_limits<double>::infinity();
  for (const auto& [id, a] : per_id_auc) m = std::min(m, a);
  return m;
}

EvalReport build_report(std::span<const ScoredClip> scores, double pauc_p, AverageMode average) {
  std::map<MachineKey, std::pair<std::vector<double>, std::vector<Label>>> groups;
  for (const auto& s : scores) {
    auto& g = groups[s.meta.key()];
    g.first.push_back(s.score);
    g.second.push_back(s.meta.label);
  }
  if (groups.empty()) throw InvalidArgument("no scored test clips");

  EvalReport report;
  report.pauc_p = pauc_p;
  report.average = average;
  std::map<std::string, std::map<int, IdMetrics>> by_type;
  for (const auto& [key, g] : groups) {
    IdMetrics m;
    m.key = key;
    m.auc = auc(g.first, g.second);
    m.pauc = pauc(g.first, g.second, pauc_p);
    m.n_anomaly = static_cast<std::size_t>(std::count(g.second.begin(), g.second.end(), Label::anomaly));
    m.n_normal = g.second.size() - m.n_anomaly;
    report.ids.push_back(m);
    by_type[key.machine_type][key.machine_id] = m;
  }
  for (const auto& [type, ids] : by_type) {
    TypeMetrics t;
    t.machine_type = type;
    std::map<int, double> aucs;
    for (const auto& [id, m] : ids) {
      t.auc += m.auc;
      t.pauc += m.pauc;
      aucs[id] = m.auc;
    }
    t.auc /= static_cast<double>(ids.size());
    t.pauc /= static_cast<double>(ids.size());
    t.mauc = mauc(aucs);
    report.types.push_back(t);
    report.average_mauc += t.mauc;
  }
  report.average_mauc /= static_cast<double>(report.types.size());
  if (average == AverageMode::types) {
    for (const auto& t : report.types) {
      report.average_auc += t.auc;
      report.average_pauc += t.pauc;
    }
    report.average_auc /= static_cast<double>(report.types.size());
    report.average_pauc /= static_cast<double>(report.types.size());
  } else {
    for (const auto& m : report.ids) {
      report.average_auc += m.auc;
      report.average_pauc += m.pauc;
    }
    report.average_auc /= static_cast<double>(report.ids.size());
    report.average_pauc /= static_cast<double>(report.ids.size());
  }
  return report;
}

EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest, const EvalConfig& cfg,
                    std::vector<ScoredClip>* scores_out) {
  const auto test = manifest.split(Split::test);
  if (test.empty()) throw InvalidArgument("manifest has no test clips");
  const AnomalyScorer scorer(ckpt, cfg.weights);
  const std::size_t length = ckpt.config.model.stft.clip_length;

  std::vector<ScoredClip> scored;
  scored.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); i += kScoreChunk) {
    std::vector<AudioClip> clips;
    for (std::size_t k = i; k < std::min(test.size(), i + kScoreChunk); ++k) {
      clips.push_back(load_clip(test[k], length));
    }
    const auto s = scorer.score(clips);
    for (std::size_t k = 0; k < clips.size(); ++k) scored.push_back({clips[k].meta, s[k]});
  }
  EvalReport report = build_report(scored, cfg.pauc_p, cfg.average);
  if (scores_out) *scores_out = std::move(scored);
  return report;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoredClip> scores) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "machine_type,machine_id,label,score,path\n";
  char buf[64];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof(buf), "%.17g", s.score);
    out << csv_field(s.meta.machine_type) << ',' << s.meta.machine_id << ','
        << to_string(s.meta.label) << ',' << buf << ',' << csv_field(s.meta.path) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "machine_type,machine_id,AUC,pAUC,mAUC\n";
  for (const auto& t : report.types) {
    for (const auto& m : report.ids) {
      if (m.key.machine_type != t.machine_type) continue;
      out << csv_field(m.key.machine_type) << ',' << m.key.machine_id << ',' << percent(m.auc)
          << ',' << percent(m.pauc) << ",\n";
    }
    out << csv_field(t.machine_type) << ",average," << percent(t.auc) << ',' << percent(t.pauc)
        << ',' << percent(t.mauc) << '\n';
  }
  out << "Average,," << percent(report.average_auc) << ',' << percent(report.average_pauc) << ','
      << percent(report.average_mauc) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& m : report.ids) {
    ids.push_back({{"machine_type", m.key.machine_type},
                   {"machine_id", m.key.machine_id},
                   {"auc", m.auc},
                   {"pauc", m.pauc},
                   {"n_normal", m.n_normal},
                   {"n_anomaly", m.n_anomaly}});
  }
  nlohmann::json types = nlohmann::json::array();
  for (const auto& t : report.types) {
    types.push_back({{"machine_type", t.machine_type}, {"auc", t.auc}, {"pauc", t.pauc}, {"mauc", t.mauc}});
  }
  return {{"ids", ids},
          {"types", types},
          {"average", {{"auc", report.average_auc},
                       {"pauc", report.average_pauc},
                       {"mauc", report.average_mauc},
                       {"over", report.average == AverageMode::types ? "types" : "ids"}}},
          {"pauc_p", report.pauc_p}};
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %-8s %8s %8s %8s\n", "machine_type", "id", "AUC", "pAUC", "mAUC");
  os << line;
  for (const auto& t : report.types) {
    for (const auto& m : report.ids) {
      if (m.key.machine_type != t.machine_type) continue;
      std::snprintf(line, sizeof(line), "%-16s %-8d %8s %8s\n", m.key.machine_type.c_str(),
                    m.key.machine_id, percent(m.auc).c_str(), percent(m.pauc).c_str());
      os << line;
    }
    std::snprintf(line, sizeof(line), "%-16s %-8s %8s %8s %8s\n", t.machine_type.c_str(), "average",
                  percent(t.auc).c_str(), percent(t.pauc).c_str(), percent(t.mauc).c_str());
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-16s %-8s %8s %8s %8s\n", "Average", "",
                percent(report.average_auc).c_str(), percent(report.average_pauc).c_str(),
                percent(report.average_mauc).c_str());
  os << line;
  return os.str();
}

}  // namespace osscl

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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "osscl/error.hpp"
#include "osscl/eval.hpp"
#include "osscl/training.hpp"
#include "oracles.hpp"
#include "tiny_corpus.hpp"

using namespace osscl;
using osscl::testing::scratch_dir;
using osscl::testing::clipped_area;
using osscl::testing::pairwise_auc;
using osscl::testing::roc;

namespace {

constexpr Label N = Label::normal;
constexpr Label A = Label::anomaly;

struct Sample {
  std::vector<double> s;
  std::vector<Label> y;
};

Sample random_sample(std::mt19937_64& rng, bool coarse) {
  std::uniform_int_distribution<std::size_t> size(20, 200);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sample out;
  const std::size_t n = size(rng);
  for (std::size_t i = 0; i < n; ++i) {
    double v = u(rng);
    if (coarse) v = std::round(v * 8.0) / 8.0;
    out.s.push_back(v);
    out.y.push_back(i < 10 ? N : (i < 12 ? A : (u(rng) < 0.4 ? A : N)));
  }
  return out;
}

ScoredClip clip(const std::string& type, int id, Label label, double score) {
  ScoredClip c;
  c.meta = ClipMetadata{type, id, label, Split::test, type + "_" + std::to_string(id) + ".wav"};
  c.score = score;
  return c;
}

// fan/0: AUC 7/9, pAUC(0.5) 7/9. fan/2: perfect. pump/1: fully reversed.
std::vector<ScoredClip> fixture() {
  return {
      clip("fan", 0, N, 0.1), clip("fan", 0, N, 0.4), clip("fan", 0, N, 0.35),
      clip("fan", 0, A, 0.8), clip("fan", 0, A, 0.3), clip("fan", 0, A, 0.5),
      clip("fan", 2, N, 0.1), clip("fan", 2, N, 0.2), clip("fan", 2, N, 0.3),
      clip("fan", 2, A, 0.7), clip("fan", 2, A, 0.8), clip("fan", 2, A, 0.9),
      clip("pump", 1, N, 0.9), clip("pump", 1, N, 0.8), clip("pump", 1, N, 0.7),
      clip("pump", 1, A, 0.1), clip("pump", 1, A, 0.2), clip("pump", 1, A, 0.3),
  };
}

}  // namespace

TEST_CASE("score is the negative log probability of the claimed id") {
  const double big = 800.0;
  CHECK(score_from_logits(std::vector<double>{big, 0.0, 0.0}, 0) == doctest::Approx(0.0));
  // logits {1, 0, x} with e^1 / (e + 1 + e^x) = e^-1.
  const double e = std::exp(1.0);
  const double x = std::log(e * e - e - 1.0);
  CHECK(score_from_logits(std::vector<double>{1.0, 0.0, x}, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(score_from_logits(std::vector<double>{1.0}, 1), InvalidArgument);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<double> by_log, by_prob;
  std::vector<Label> y;
  for (int i = 0; i < 300; ++i) {
    const std::vector<double> logits{g(rng), g(rng), g(rng), g(rng)};
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    by_log.push_back(score_from_logits(logits, 2));
    by_prob.push_back(1.0 - std::exp(logits[2] - mx) / z);
    y.push_back(i % 3 == 0 ? A : N);
  }
  CHECK(auc(by_log, y) == auc(by_prob, y));
  for (int i = 0; i < 300; ++i) {
    for (int j = 0; j < 300; ++j) {
      if (by_prob[i] < by_prob[j] - 1e-12) REQUIRE(by_log[i] < by_log[j]);
    }
  }
}

TEST_CASE("auc examples") {
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<Label>{A, A, N, N}) == 1.0);
  CHECK(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<Label>{A, N, A, N}) == 0.5);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.9}, std::vector<Label>{A, A, N}) == 0.0);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<Label>{N, N}), InvalidArgument);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1}, std::vector<Label>{N, A}), InvalidArgument);
  CHECK_THROWS_AS(auc(std::vector<double>{NAN, 0.1}, std::vector<Label>{N, A}), NumericError);
}

TEST_CASE("auc matches the pairwise count and trapezoidal ROC") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const Sample x = random_sample(rng, t % 2 == 1);
    const double a = auc(x.s, x.y);
    CHECK(a == pairwise_auc(x.s, x.y));
    CHECK(std::abs(a - clipped_area(roc(x.s, x.y), 1.0)) < 1e-10);
  }
}

TEST_CASE("auc is invariant under increasing transforms") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    Sample x = random_sample(rng, t % 2 == 0);
    std::vector<double> warped;
    for (double v : x.s) warped.push_back(std::exp(3.0 * v) - 7.0);
    CHECK(auc(warped, x.y) == auc(x.s, x.y));
    CHECK(pauc(warped, x.y) == doctest::Approx(pauc(x.s, x.y)).epsilon(1e-12));
  }
}

TEST_CASE("pauc examples") {
  std::vector<double> s;
  std::vector<Label> y;
  for (int i = 0; i < 10; ++i) {
    s.push_back(i);
    y.push_back(N);
    s.push_back(100 + i);
    y.push_back(A);
  }
  CHECK(pauc(s, y) == doctest::Approx(1.0));
  CHECK(pauc(s, y, 0.1, false) == doctest::Approx(1.0));
  for (double& v : s) v = -v;
  CHECK(pauc(s, y) == doctest::Approx(0.5 * (1.0 + (0.0 - 0.005) / 0.095)).epsilon(1e-12));
  CHECK(pauc(s, y) == doctest::Approx(0.47368).epsilon(1e-4));
  CHECK(pauc(s, y, 0.1, false) == 0.0);

  const std::vector<double> few{0.1, 0.2, 0.9};
  const std::vector<Label> few_y{N, N, A};
  CHECK_THROWS_AS(pauc(few, few_y, 0.1), InvalidArgument);
  CHECK_THROWS_AS(pauc(few, few_y, 0.0), InvalidArgument);
  CHECK_THROWS_AS(pauc(few, few_y, 1.5), InvalidArgument);
  CHECK_NOTHROW(pauc(few, few_y, 0.5));
}

TEST_CASE("pauc matches a clipped ROC oracle") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 300; ++t) {
    const Sample x = random_sample(rng, t % 3 == 0);
    const auto pts = roc(x.s, x.y);
    for (double p : {0.1, 0.25, 0.5}) {
      const double raw = clipped_area(pts, p);
      CHECK(std::abs(pauc(x.s, x.y, p, false) - raw / p) < 1e-10);
      const double mcclish = 0.5 * (1.0 + (raw - p * p / 2.0) / (p - p * p / 2.0));
      CHECK(std::abs(pauc(x.s, x.y, p) - mcclish) < 1e-10);
    }
    CHECK(pauc(x.s, x.y, 1.0) == auc(x.s, x.y));
    CHECK(pauc(x.s, x.y, 1.0, false) == auc(x.s, x.y));
  }
}

TEST_CASE("mauc is the minimum") {
  CHECK(mauc({{1, 0.9}, {2, 0.8}, {3, 0.95}}) == 0.8);
  CHECK(mauc({{4, 0.66}}) == 0.66);
  CHECK_THROWS_AS(mauc({}), InvalidArgument);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 100; ++t) {
    std::map<int, double> m;
    double lo = 1.0;
    for (int i = 0; i < 1 + t % 7; ++i) {
      m[i] = u(rng);
      lo = std::min(lo, m[i]);
    }
    CHECK(mauc(m) == lo);
  }
}

TEST_CASE("hand-built fixture reproduces hand-computed metrics") {
  const auto scores = fixture();
  const EvalReport r = build_report(scores, 0.5);
  REQUIRE(r.ids.size() == 3);
  REQUIRE(r.types.size() == 2);
  CHECK(r.ids[0].key == MachineKey{"fan", 0});
  CHECK(r.ids[0].auc == doctest::Approx(7.0 / 9.0));
  CHECK(r.ids[0].pauc == doctest::Approx(7.0 / 9.0));
  CHECK(r.ids[0].n_normal == 3);
  CHECK(r.ids[0].n_anomaly == 3);
  CHECK(r.ids[1].auc == 1.0);
  CHECK(r.ids[2].key == MachineKey{"pump", 1});
  CHECK(r.ids[2].auc == 0.0);
  CHECK(r.ids[2].pauc == doctest::Approx(1.0 / 3.0));

  CHECK(r.types[0].machine_type == "fan");
  CHECK(r.types[0].auc == doctest::Approx(8.0 / 9.0));
  CHECK(r.types[0].mauc == doctest::Approx(7.0 / 9.0));
  CHECK(r.types[1].pauc == doctest::Approx(1.0 / 3.0));
  CHECK(r.average_auc == doctest::Approx(4.0 / 9.0));
  CHECK(r.average_pauc == doctest::Approx(11.0 / 18.0));
  CHECK(r.average_mauc == doctest::Approx(7.0 / 18.0));

  const EvalReport by_id = build_report(scores, 0.5, AverageMode::ids);
  CHECK(by_id.average_auc == doctest::Approx(16.0 / 27.0));
  CHECK(by_id.average_pauc == doctest::Approx(19.0 / 27.0));
  CHECK(by_id.average_mauc == doctest::Approx(7.0 / 18.0));

  for (const auto& t : r.types) {
    for (const auto& m : r.ids) {
      if (m.key.machine_type == t.machine_type) CHECK(t.mauc <= m.auc);
    }
    CHECK(t.mauc <= t.auc);
  }
  CHECK_THROWS_AS(build_report(scores, 0.1), InvalidArgument);
  CHECK_THROWS_AS(build_report(std::vector<ScoredClip>{}, 0.5), InvalidArgument);
}

TEST_CASE("report files") {
  const auto scores = fixture();
  const EvalReport r = build_report(scores, 0.5);
  const auto dir = scratch_dir("eval_files");
  write_report_csv(dir / "report.csv", r);
  std::ifstream in(dir / "report.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() ==
        "machine_type,machine_id,AUC,pAUC,mAUC\n"
        "fan,0,77.78,77.78,\n"
        "fan,2,100.00,100.00,\n"
        "fan,average,88.89,88.89,77.78\n"
        "pump,1,0.00,33.33,\n"
        "pump,average,0.00,33.33,0.00\n"
        "Average,,44.44,61.11,38.89\n");

  write_scores_csv(dir / "scores.csv", scores);
  std::ifstream sin(dir / "scores.csv");
  std::string header, first;
  std::getline(sin, header);
  std::getline(sin, first);
  CHECK(header == "machine_type,machine_id,label,score,path");
  CHECK(first == "fan,0,normal,0.10000000000000001,fan_0.wav");

  const auto j = to_json(r);
  CHECK(j["average"]["auc"].get<double>() == doctest::Approx(4.0 / 9.0));
  CHECK(j["ids"].size() == 3);
  CHECK(format_report(r).find("pump") != std::string::npos);
}

TEST_CASE("evaluate scores every test clip against its own id") {
  const auto manifest = osscl::testing::tiny_corpus("eval_e2e");
  const auto run = train(manifest, osscl::testing::tiny_run_config(4), scratch_dir("eval_e2e_out"));
  const Checkpoint ckpt = load_checkpoint(run.checkpoint);
  EvalConfig cfg;
  cfg.pauc_p = 0.5;
  std::vector<ScoredClip> scores;
  const EvalReport r = evaluate(ckpt, manifest, cfg, &scores);
  CHECK(r.ids.size() == 3);
  CHECK(r.types.size() == 1);
  CHECK(scores.size() == manifest.split(Split::test).size());
  for (const auto& m : r.ids) {
    CHECK(m.auc >= 0.0);
    CHECK(m.auc <= 1.0);
    CHECK(m.pauc >= 0.0);
    CHECK(m.pauc <= 1.0);
  }
  CHECK(r.types[0].mauc <= r.types[0].auc);

  std::vector<ScoredClip> again;
  evaluate(ckpt, manifest, cfg, &again);
  for (std::size_t i = 0; i < scores.size(); ++i) CHECK(again[i].score == scores[i].score);

  const AnomalyScorer scorer(ckpt, WeightSet::ema);
  const ClipMetadata meta = manifest.split(Split::test).front();
  const AudioClip audio = load_clip(meta, osscl::testing::tiny_stft().clip_length);
  const std::vector<AudioClip> batch{audio, audio};
  const auto batched = scorer.score(batch);
  CHECK(batched[0] == doctest::Approx(scorer.score(audio.samples, meta.key())).epsilon(1e-12));
  CHECK(batched[0] == doctest::Approx(scores.front().score).epsilon(1e-12));
  CHECK_THROWS_AS(scorer.score(audio.samples, MachineKey{"synthetic", 99}), NotFound);
  const std::vector<float> short_clip(100, 0.0f);
  CHECK_THROWS_AS(scorer.score(short_clip, meta.key()), ShapeError);
}

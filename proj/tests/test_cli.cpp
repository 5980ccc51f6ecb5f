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

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "osscl/checkpoint.hpp"
#include "osscl/cli.hpp"
#include "osscl/error.hpp"
#include "tiny_corpus.hpp"

using namespace osscl;
using nlohmann::json;
using osscl::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "osscl");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Small run config plus matching waveform front-ends so tfst also trains fast.
fs::path write_tiny_config(const fs::path& dir) {
  RunConfig cfg = osscl::testing::tiny_run_config(2);
  cfg.model.tgram.channels = 16;
  cfg.model.tgram.kernel = 256;
  cfg.model.tgram.stride = 128;
  cfg.model.tgram.padding = 128;
  cfg.model.tfgram.stem_channels = 4;
  cfg.model.tfgram.block_channels = {4, 8, 16};
  cfg.model.tfgram.adaptive_sizes = {66, 33};
  cfg.eval.pauc_p = 0.5;  // two normals per id in the tiny corpus
  const fs::path path = dir / "tiny.json";
  std::ofstream(path) << to_json(cfg).dump(2);
  return path;
}

// One synthetic corpus shared by the end-to-end cases.
const fs::path& corpus() {
  static const fs::path root = [] {
    const fs::path dir = scratch_dir("cli_corpus");
    REQUIRE(run({"synth", "--out", dir.string(), "--ids", "3", "--clips-per-id", "6", "--test-clips-per-id",
                 "4", "--seed", "7"}) == 0);
    return dir;
  }();
  return root;
}

}  // namespace

TEST_CASE("reduction lists") {
  const auto r = parse_reductions("none,128,64,4");
  REQUIRE(r.size() == 4);
  CHECK_FALSE(r[0].has_value());
  CHECK(*r[1] == 128);
  CHECK(*r[3] == 4);
  CHECK_THROWS_AS(parse_reductions("64,,8"), InvalidArgument);
  CHECK_THROWS_AS(parse_reductions("0"), InvalidArgument);
  CHECK_THROWS_AS(parse_reductions("abc"), InvalidArgument);
  CHECK_THROWS_AS(parse_reductions(""), InvalidArgument);
}

TEST_CASE("config reader is strict and round trips") {
  const RunConfig cfg = osscl::testing::tiny_run_config(5);
  const json j = to_json(cfg);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.training == cfg.training);

  json bad = j;
  bad["training"]["epochz"] = 3;
  CHECK_THROWS_AS(run_config_from_json(bad), InvalidArgument);
  bad = j;
  bad["optimizer"] = json::object();
  CHECK_THROWS_AS(run_config_from_json(bad), InvalidArgument);
  bad = j;
  bad["training"]["ema_decay"] = 1.5;
  CHECK_THROWS_AS(run_config_from_json(bad), InvalidArgument);
  bad = j;
  bad["eval"]["pauc_p"] = 0.0;
  CHECK_THROWS_AS(run_config_from_json(bad), InvalidArgument);
  bad = j;
  bad["losses"]["temperature"] = -1.0;
  CHECK_THROWS_AS(run_config_from_json(bad), InvalidArgument);
  bad = j;
  bad["model"]["fph_reduction"] = "none";
  CHECK_FALSE(run_config_from_json(bad).model.fph.has_value());
  bad["paths"] = {{"out", "/somewhere"}};
  CHECK_NOTHROW(run_config_from_json(bad));
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), NotFound);
}

TEST_CASE("shipped presets match the built-in paper settings") {
  const fs::path dir = fs::path(OSSCL_SOURCE_DIR) / "configs";
  const RunConfig logmel = load_run_config(dir / "paper_logmel.json");
  CHECK(logmel.model.feature_mode == FeatureMode::logmel);
  CHECK(logmel.model.fph == paper_logmel_config().fph);
  CHECK(logmel.model.arcface.margin == doctest::Approx(0.7));
  CHECK(logmel.model.arcface.scale == doctest::Approx(30.0));
  CHECK(logmel.contrastive.temperature == doctest::Approx(0.02));
  CHECK(logmel.training.epochs == 300);
  CHECK(logmel.training.batch_size == 64);
  CHECK(logmel.training.lr0 == doctest::Approx(1e-4));
  CHECK(logmel.training.ema_decay == doctest::Approx(0.999));

  const RunConfig tfst = load_run_config(dir / "paper_tfst.json");
  CHECK(tfst.model.feature_mode == FeatureMode::tfst);
  CHECK(tfst.model.fph == paper_tfst_config().fph);
  CHECK(tfst.model.arcface.margin == doctest::Approx(0.4));
  CHECK(tfst.model.backbone.in_channels == 3);
}

TEST_CASE("argument and input errors map to exit code 2") {
  const fs::path out = scratch_dir("cli_errors");
  CHECK(run({}) == 2);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"train", "--data-root", (out / "missing").string(), "--out", out.string()}) == 2);
  CHECK(run({"train", "--data-root", corpus().string(), "--out", out.string(), "--fph-reduction", "x"}) == 2);
  CHECK(run({"train", "--data-root", corpus().string(), "--out", out.string(), "--config",
             (out / "nope.json").string()}) == 2);
  CHECK(run({"ablate-fph", "--data-root", corpus().string(), "--out", out.string(), "--reductions",
             "none,1024"}) == 2);
  CHECK(run({"eval", "--checkpoint", (out / "none.bin").string(), "--data-root", corpus().string(), "--out",
             out.string()}) == 2);
  CHECK(run({"frobnicate"}) == 2);
}

TEST_CASE("synth, train, eval and score end to end") {
  const fs::path work = scratch_dir("cli_flow");
  const std::string config = write_tiny_config(work).string();
  const fs::path train_dir = work / "train";
  REQUIRE(run({"train", "--config", config, "--data-root", corpus().string(), "--out", train_dir.string(),
               "--epochs", "3", "--quiet"}) == 0);
  CHECK(fs::exists(corpus() / "effective_config.json"));
  CHECK(fs::exists(train_dir / "checkpoint.bin"));
  const json eff = read_json(train_dir / "effective_config.json");
  CHECK(eff["training"]["epochs"] == 3);
  CHECK(eff["paths"]["data_root"] == corpus().string());
  std::size_t log_lines = 0;
  std::ifstream log(train_dir / "train_log.jsonl");
  for (std::string line; std::getline(log, line);) ++log_lines;
  CHECK(log_lines == 3);

  const std::string ckpt = (train_dir / "checkpoint.bin").string();
  const fs::path eval_a = work / "eval_a", eval_b = work / "eval_b";
  REQUIRE(run({"eval", "--checkpoint", ckpt, "--data-root", corpus().string(), "--out", eval_a.string(),
               "--pauc-p", "0.5"}) == 0);
  REQUIRE(run({"eval", "--checkpoint", ckpt, "--data-root", corpus().string(), "--out", eval_b.string(),
               "--pauc-p", "0.5"}) == 0);
  for (const char* f : {"report.csv", "report.json", "scores.csv", "effective_config.json"}) {
    CHECK(fs::exists(eval_a / f));
  }
  CHECK(slurp(eval_a / "report.csv") == slurp(eval_b / "report.csv"));
  CHECK(slurp(eval_a / "scores.csv") == slurp(eval_b / "scores.csv"));
  CHECK(read_json(eval_a / "effective_config.json")["eval"]["pauc_p"] == 0.5);
  // Three ids, each 2 normal and 2 anomalous, and p=0.1 leaves no normal inside the range.
  CHECK(run({"eval", "--checkpoint", ckpt, "--data-root", corpus().string(), "--out", eval_b.string(),
             "--pauc-p", "0.1"}) == 2);

  const std::string wav = (corpus() / "synthetic" / "test").string();
  std::string first_wav;
  for (const auto& e : fs::directory_iterator(wav)) {
    if (first_wav.empty() || e.path().string() < first_wav) first_wav = e.path().string();
  }
  CHECK(run({"score", "--checkpoint", ckpt, "--wav", first_wav, "--id", "synthetic/0", "--out",
             (work / "score").string()}) == 0);
  CHECK(fs::exists(work / "score" / "effective_config.json"));
  CHECK(run({"score", "--checkpoint", ckpt, "--wav", first_wav, "--id", "synthetic/42"}) == 2);
  CHECK(run({"score", "--checkpoint", ckpt, "--wav", (work / "gone.wav").string(), "--id", "synthetic/0"}) == 2);
}

TEST_CASE("feature override and seed fallback") {
  const fs::path work = scratch_dir("cli_override");
  const std::string config = write_tiny_config(work).string();
  REQUIRE(run({"train", "--config", config, "--data-root", corpus().string(), "--out", (work / "tfst").string(),
               "--feature", "tfst", "--epochs", "1", "--quiet"}) == 0);
  const json eff = read_json(work / "tfst" / "effective_config.json");
  CHECK(eff["model"]["feature_mode"] == "tfst");
  CHECK(load_checkpoint(work / "tfst" / "checkpoint.bin").config.model.backbone.in_channels == 3);

  // The tiny config pins a seed; drop it so the environment decides.
  json j = read_json(config);
  j["training"].erase("seed");
  const fs::path unseeded = work / "unseeded.json";
  std::ofstream(unseeded) << j.dump();
  setenv("OSSCL_SEED", "1234", 1);
  REQUIRE(run({"train", "--config", unseeded.string(), "--data-root", corpus().string(), "--out",
               (work / "env").string(), "--epochs", "0", "--quiet"}) == 0);
  REQUIRE(run({"train", "--config", config, "--data-root", corpus().string(), "--out",
               (work / "pinned").string(), "--epochs", "0", "--quiet"}) == 0);
  REQUIRE(run({"train", "--config", unseeded.string(), "--data-root", corpus().string(), "--out",
               (work / "flag").string(), "--epochs", "0", "--seed", "5", "--quiet"}) == 0);
  setenv("OSSCL_SEED", "oops", 1);
  CHECK(run({"train", "--config", unseeded.string(), "--data-root", corpus().string(), "--out",
             (work / "bad").string(), "--epochs", "0", "--quiet"}) == 2);
  unsetenv("OSSCL_SEED");
  CHECK(read_json(work / "env" / "effective_config.json")["training"]["seed"] == 1234);
  CHECK(read_json(work / "pinned" / "effective_config.json")["training"]["seed"] == 3);
  CHECK(read_json(work / "flag" / "effective_config.json")["training"]["seed"] == 5);
}

TEST_CASE("ablation trains one model per reduction") {
  const fs::path work = scratch_dir("cli_ablate");
  const std::string config = write_tiny_config(work).string();
  REQUIRE(run({"ablate-fph", "--config", config, "--data-root", corpus().string(), "--out",
               (work / "out").string(), "--reductions", "none,4", "--epochs", "1", "--quiet"}) == 0);
  CHECK(fs::exists(work / "out" / "fph_none" / "checkpoint.bin"));
  CHECK(fs::exists(work / "out" / "fph_4" / "checkpoint.bin"));
  const std::string table = slurp(work / "out" / "ablation.csv");
  CHECK(table.rfind("machine_type,none,4\n", 0) == 0);
  CHECK(table.find("\nAverage,") != std::string::npos);
}

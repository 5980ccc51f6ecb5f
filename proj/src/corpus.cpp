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

#include "osscl/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <regex>
#include <set>
#include <thread>

#include "osscl/error.hpp"
#include "osscl/wav.hpp"

namespace osscl {

namespace fs = std::filesystem;

std::string to_string(Label label) { return label == Label::normal ? "normal" : "anomaly"; }
std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Label label_from_string(const std::string& s) {
  if (s == "normal") return Label::normal;
  if (s == "anomaly") return Label::anomaly;
  throw InvalidArgument("unknown label '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split '" + s + "'");
}

std::string to_string(const MachineKey& key) {
  return key.machine_type + "/" + std::to_string(key.machine_id);
}

MachineKey machine_key_from_string(const std::string& s) {
  static const std::regex pattern(R"(^([^/]+)/(\d+)$)");
  std::smatch m;
  if (!std::regex_match(s, m, pattern)) {
    throw InvalidArgument("machine id '" + s + "' is not of the form <type>/<id>");
  }
  return {m[1].str(), std::stoi(m[2].str())};
}

DatasetManifest::DatasetManifest(std::vector<ClipMetadata> clips) : clips_(std::move(clips)) {
  std::set<MachineKey> train_keys;
  for (const auto& c : clips_) {
    if (c.split != Split::train) continue;
    if (c.label != Label::normal) {
      throw InvalidArgument("train split contains an anomaly clip: " + c.path);
    }
    train_keys.insert(c.key());
  }
  int index = 0;
  for (const auto& k : train_keys) class_map_.emplace(k, index++);
  for (const auto& c : clips_) {
    if (c.split == Split::test && !class_map_.contains(c.key())) {
      throw InvalidArgument("test clip " + c.path + " belongs to machine " + to_string(c.key()) +
                            " which has no training data");
    }
  }
}

int DatasetManifest::class_index(const MachineKey& key) const {
  auto it = class_map_.find(key);
  if (it == class_map_.end()) throw NotFound("unknown machine id " + to_string(key));
  return it->second;
}

std::vector<ClipMetadata> DatasetManifest::split(Split s) const {
  std::vector<ClipMetadata> out;
  std::copy_if(clips_.begin(), clips_.end(), std::back_inserter(out),
               [s](const ClipMetadata& c) { return c.split == s; });
  return out;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes();
  j["class_map"] = nlohmann::json::array();
  for (const auto& [key, index] : class_map_) {
    j["class_map"].push_back(
        {{"machine_type", key.machine_type}, {"machine_id", key.machine_id}, {"index", index}});
  }
  j["clips"] = nlohmann::json::array();
  for (const auto& c : clips_) {
    j["clips"].push_back({{"machine_type", c.machine_type},
                          {"machine_id", c.machine_id},
                          {"label", to_string(c.label)},
                          {"split", to_string(c.split)},
                          {"path", c.path}});
  }
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  std::vector<ClipMetadata> clips;
  for (const auto& c : j.at("clips")) {
    clips.push_back({c.at("machine_type").get<std::string>(), c.at("machine_id").get<int>(),
                     label_from_string(c.at("label")), split_from_string(c.at("split")),
                     c.at("path").get<std::string>()});
  }
  return DatasetManifest(std::move(clips));
}

ClipMetadata parse_clip_path(const fs::path& file) {
  static const std::regex pattern(R"(^(normal|anomaly)_id_(\d+)_(\d+)\.wav$)");
  const std::string name = file.filename().string();
  std::smatch m;
  if (!std::regex_match(name, m, pattern)) {
    throw InvalidArgument("unparsable clip file name '" + file.string() +
                          "' (expected <label>_id_<NN>_<seq>.wav)");
  }
  ClipMetadata meta;
  meta.machine_type = file.parent_path().parent_path().filename().string();
  meta.machine_id = std::stoi(m[2].str());
  meta.label = label_from_string(m[1].str());
  meta.split = split_from_string(file.parent_path().filename().string());
  meta.path = file.string();
  if (meta.machine_type.empty()) {
    throw InvalidArgument("clip path '" + file.string() + "' has no machine type directory");
  }
  return meta;
}

DatasetManifest scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw NotFound("dataset root not found: " + root.string());
  std::vector<fs::path> types;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) types.push_back(entry.path());
  }
  std::sort(types.begin(), types.end());
  std::vector<ClipMetadata> clips;
  for (const auto& type_dir : types) {
    if (!fs::is_directory(type_dir / "train")) {
      throw NotFound("missing directory " + (type_dir / "train").string());
    }
    for (const char* split : {"train", "test"}) {
      const fs::path dir = type_dir / split;
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) clips.push_back(parse_clip_path(f));
    }
  }
  if (clips.empty()) throw NotFound("no WAV files under " + root.string());
  return DatasetManifest(std::move(clips));
}

std::vector<float> pad_or_trim(std::vector<float> samples, std::size_t length) {
  samples.resize(length, 0.0f);
  return samples;
}

AudioClip load_clip(const ClipMetadata& meta, std::size_t length) {
  WavData wav = read_wav(meta.path);
  if (wav.channels != 1) {
    throw InvalidArgument(meta.path + ": expected mono audio, found " +
                          std::to_string(wav.channels) + " channels");
  }
  if (wav.sample_rate != kSampleRate) {
    throw InvalidArgument(meta.path + ": sample rate " + std::to_string(wav.sample_rate) +
                          " Hz, expected " + std::to_string(kSampleRate) + " Hz");
  }
  return {pad_or_trim(std::move(wav.samples), length), wav.sample_rate, meta};
}

double synth_base_frequency(int machine_id) { return 200.0 * (machine_id + 1); }

std::vector<double> synth_clip(int machine_id, Label label, std::uint64_t clip_seed,
                               std::size_t length) {
  std::mt19937_64 rng(clip_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double two_pi = 2.0 * std::numbers::pi;
  const double sr = kSampleRate;
  const double f0 = synth_base_frequency(machine_id) * (1.0 + 0.02 * (unit(rng) - 0.5));
  const double a1 = 0.25 + 0.1 * unit(rng);
  const double a3 = 0.1 + 0.1 * unit(rng);
  const double p1 = two_pi * unit(rng);
  const double p3 = two_pi * unit(rng);
  std::vector<double> x(length);
  for (std::size_t t = 0; t < length; ++t) {
    const double time = static_cast<double>(t) / sr;
    x[t] = a1 * std::sin(two_pi * f0 * time + p1) + a3 * std::sin(two_pi * 3.0 * f0 * time + p3) +
           noise(rng);
  }
  if (label == Label::anomaly) {
    // Detuned partial between the 2nd and 3rd harmonic.
    const double fd = 2.5 * f0;
    const double ad = 0.1 + 0.1 * unit(rng);
    const double pd = two_pi * unit(rng);
    for (std::size_t t = 0; t < length; ++t) {
      x[t] += ad * std::sin(two_pi * fd * static_cast<double>(t) / sr + pd);
    }
    const std::size_t burst = std::min<std::size_t>(length, kSampleRate / 2);
    const auto start = static_cast<std::size_t>(unit(rng) * static_cast<double>(length - burst));
    std::normal_distribution<double> broadband(0.0, 0.3);
    for (std::size_t t = start; t < start + burst; ++t) x[t] += broadband(rng);
  }
  return x;
}

namespace {

std::uint64_t clip_seed(std::uint64_t seed, int id, Split split, Label label, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(split),
                    static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return std::uint64_t(words[0]) << 32 | words[1];
}

std::string clip_name(Label label, int id, int seq) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_id_%02d_%08d.wav", to_string(label).c_str(), id, seq);
  return buf;
}

}  // namespace

DatasetManifest synth_generate(const SynthOptions& options, const fs::path& out) {
  if (options.n_ids < 2) throw InvalidArgument("synthetic corpus needs at least 2 machine ids");
  if (options.clips_per_id < 1 || options.test_clips_per_id < 0) {
    throw InvalidArgument("synthetic corpus needs a positive clip count");
  }
  const fs::path type_dir = out / options.machine_type;
  std::error_code ec;
  fs::create_directories(type_dir / "train", ec);
  if (!ec) fs::create_directories(type_dir / "test", ec);
  if (ec) throw IoError("cannot create output directory " + type_dir.string() + ": " + ec.message());

  auto render = [&](int id, Split split, Label label, int index) {
    const auto x = synth_clip(id, label, clip_seed(options.seed, id, split, label, index),
                              options.clip_length);
    write_wav(type_dir / to_string(split) / clip_name(label, id, index), x, kSampleRate);
  };
  for (int id = 0; id < options.n_ids; ++id) {
    for (int i = 0; i < options.clips_per_id; ++i) render(id, Split::train, Label::normal, i);
    const int anomalies = options.test_clips_per_id / 2;
    for (int i = 0; i < options.test_clips_per_id - anomalies; ++i) {
      render(id, Split::test, Label::normal, i);
    }
    for (int i = 0; i < anomalies; ++i) render(id, Split::test, Label::anomaly, i);
  }
  return scan_dataset(out);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

BatchStream::BatchStream(const DatasetManifest& manifest, BatchOptions options)
    : options_(std::move(options)), train_(manifest.split(Split::train)) {
  if (options_.batch_size < 2) {
    throw InvalidArgument("batch size must be at least 2 (mixup and contrastive loss pair samples)");
  }
  if (train_.empty()) throw InvalidArgument("manifest has no train clips");
  for (const auto& c : train_) labels_.push_back(manifest.class_index(c.key()));

  const std::size_t n = train_.size();
  if (options_.load_waveforms) waveforms_.resize(n);
  logmels_.resize(n);
  const LogMelExtractor extractor(options_.stft);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        AudioClip clip = load_clip(train_[i], options_.stft.clip_length);
        logmels_[i] = extractor.compute(std::span<const float>(clip.samples));
        if (options_.load_waveforms) waveforms_[i] = std::move(clip.samples);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, options_.workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

std::size_t BatchStream::batches_per_epoch() const {
  const std::size_t n = train_.size();
  std::size_t count = (n + options_.batch_size - 1) / options_.batch_size;
  // A trailing singleton is folded into the previous batch.
  if (count > 1 && n % options_.batch_size == 1) --count;
  return count;
}

Batch BatchStream::batch(std::size_t epoch, std::size_t index) const {
  const std::size_t count = batches_per_epoch();
  if (index >= count) throw InvalidArgument("batch index out of range");
  const auto perm = epoch_permutation(train_.size(), options_.seed, epoch);
  const std::size_t begin = index * options_.batch_size;
  const std::size_t end = index + 1 == count ? perm.size() : begin + options_.batch_size;
  return assemble(std::span<const std::size_t>(perm).subspan(begin, end - begin));
}

std::vector<Batch> BatchStream::epoch(std::size_t epoch) const {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < batches_per_epoch(); ++i) out.push_back(batch(epoch, i));
  return out;
}

Batch BatchStream::assemble(std::span<const std::size_t> indices) const {
  Batch b;
  const std::size_t n = indices.size();
  const std::size_t length = options_.stft.clip_length;
  const std::size_t cells = options_.stft.n_mels * options_.stft.frames();
  std::vector<double> mels(n * cells);
  std::vector<double> waves(options_.load_waveforms ? n * length : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = indices[i];
    std::copy(logmels_[k].begin(), logmels_[k].end(), mels.begin() + static_cast<std::ptrdiff_t>(i * cells));
    if (options_.load_waveforms) {
      std::copy(waveforms_[k].begin(), waveforms_[k].end(),
                waves.begin() + static_cast<std::ptrdiff_t>(i * length));
    }
    b.labels.push_back(labels_[k]);
    b.clip_indices.push_back(k);
  }
  b.logmels = nn::Tensor({n, options_.stft.n_mels, options_.stft.frames()}, std::move(mels));
  if (options_.load_waveforms) b.waveforms = nn::Tensor({n, length}, std::move(waves));
  return b;
}

}  // namespace osscl

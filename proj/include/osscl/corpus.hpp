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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "osscl/features.hpp"
#include "osscl/nn/tensor.hpp"

namespace osscl {

inline constexpr std::uint32_t kSampleRate = 16000;
inline constexpr std::size_t kClipLength = 160000;

enum class Label { normal, anomaly };
enum class Split { train, test };

std::string to_string(Label label);
std::string to_string(Split split);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct MachineKey {
  std::string machine_type;
  int machine_id = 0;

  auto operator<=>(const MachineKey&) const = default;
  bool operator==(const MachineKey&) const = default;
};

// "fan/1" style identifier used on the command line and in reports.
std::string to_string(const MachineKey& key);
MachineKey machine_key_from_string(const std::string& s);

struct ClipMetadata {
  std::string machine_type;
  int machine_id = 0;
  Label label = Label::normal;
  Split split = Split::train;
  std::string path;

  MachineKey key() const { return {machine_type, machine_id}; }
  bool operator==(const ClipMetadata&) const = default;
};

struct AudioClip {
  std::vector<float> samples;
  std::uint32_t sample_rate = kSampleRate;
  ClipMetadata meta;
};

// Clip listing plus the dense class index of every (type, id) seen in train.
// Classes are ordered lexicographically by (machine_type, machine_id).
class DatasetManifest {
 public:
  DatasetManifest() = default;
  // Builds the class map from the train clips; rejects test clips whose
  // machine is not in it and anomalies in the train split.
  explicit DatasetManifest(std::vector<ClipMetadata> clips);

  const std::vector<ClipMetadata>& clips() const { return clips_; }
  const std::map<MachineKey, int>& class_map() const { return class_map_; }
  int num_classes() const { return static_cast<int>(class_map_.size()); }
  // Throws NotFound for unknown machines.
  int class_index(const MachineKey& key) const;

  std::vector<ClipMetadata> split(Split s) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);

 private:
  std::vector<ClipMetadata> clips_;
  std::map<MachineKey, int> class_map_;
};

// Parses `<type>/<split>/<label>_id_<NN>_<seq>.wav`.
ClipMetadata parse_clip_path(const std::filesystem::path& file);

// Walks `<root>/<machine_type>/{train,test}/*.wav`; clips sorted by path.
DatasetManifest scan_dataset(const std::filesystem::path& root);

// Pads with trailing zeros or truncates to `length`.
std::vector<float> pad_or_trim(std::vector<float> samples, std::size_t length = kClipLength);

// Loads a mono 16 kHz clip normalized to kClipLength samples.
AudioClip load_clip(const ClipMetadata& meta, std::size_t length = kClipLength);

struct SynthOptions {
  int n_ids = 4;
  int clips_per_id = 100;       // train clips, all normal
  int test_clips_per_id = 40;   // half normal, half anomaly
  std::uint64_t seed = 7;
  std::string machine_type = "synthetic";
  std::size_t clip_length = kClipLength;
};

// Base frequency of synthetic machine k; the 3rd harmonic is added too.
double synth_base_frequency(int machine_id);

// Renders one synthetic clip. Normal: two harmonics + N(0, 0.05^2).
// Anomaly adds a detuned partial and a 0.5 s broadband burst.
std::vector<double> synth_clip(int machine_id, Label label, std::uint64_t clip_seed,
                               std::size_t length = kClipLength);

// Writes a DCASE-layout corpus under `out` and returns its scanned manifest.
DatasetManifest synth_generate(const SynthOptions& options, const std::filesystem::path& out);

struct Batch {
  nn::Tensor waveforms;  // B x L, undefined when waveforms are not loaded
  nn::Tensor logmels;    // B x M x N
  std::vector<int> labels;
  std::vector<std::size_t> clip_indices;  // into the train split

  std::size_t size() const { return labels.size(); }
};

// Deterministic in (n, seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct BatchOptions {
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool load_waveforms = true;
  StftConfig stft;
  // Clip decoding workers; emitted order never depends on this.
  std::size_t workers = 1;
};

// Shuffled train batches. Waveforms and log-Mels of every train clip are
// decoded once and cached.
class BatchStream {
 public:
  BatchStream(const DatasetManifest& manifest, BatchOptions options);

  std::size_t batches_per_epoch() const;
  std::size_t train_size() const { return train_.size(); }
  Batch batch(std::size_t epoch, std::size_t index) const;
  std::vector<Batch> epoch(std::size_t epoch) const;

 private:
  Batch assemble(std::span<const std::size_t> indices) const;

  BatchOptions options_;
  std::vector<ClipMetadata> train_;
  std::vector<int> labels_;
  std::vector<std::vector<float>> waveforms_;
  std::vector<std::vector<double>> logmels_;
};

}  // namespace osscl

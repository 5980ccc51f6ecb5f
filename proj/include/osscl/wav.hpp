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

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace osscl {

struct WavData {
  std::uint32_t sample_rate = 0;
  std::uint16_t channels = 0;
  // Interleaved samples scaled by 1/32768.
  std::vector<float> samples;
};

// Reads a RIFF/WAVE file holding 16-bit PCM. Throws IoError on malformed
// input or unsupported encodings.
WavData read_wav(const std::filesystem::path& path);

// Writes mono 16-bit PCM. Samples are clamped to the representable range.
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               std::uint32_t sample_rate);

}  // namespace osscl

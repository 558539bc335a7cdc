// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace freqdyn::features {

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Wave {
  std::vector<double> samples;  // in [-1, 1)
  int sample_rate = 16000;
};

/// Reads a mono 16-bit PCM RIFF/WAVE file.
Wave read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate);

}  // namespace freqdyn::features

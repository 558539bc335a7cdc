// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "freqdyn/datakit/synth.hpp"

// On-disk dataset layout:
//   <dir>/<split>/<name>.wav     for split in strong, weak, unlabeled, validation
//   <dir>/strong.tsv, validation.tsv   strong labels
//   <dir>/weak.tsv                     weak labels
//   <dir>/manifest_<split>.tsv         filename, FNV-1a 64 hash of the file, samples
namespace freqdyn::datakit {

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"strong", "weak", "unlabeled", "validation"};
  return names;
}

/// Strong-labelled held-out clips from their own seed stream.
std::vector<ClipExample> make_validation(std::uint64_t seed, std::size_t count, const SynthConfig& cfg = {});

std::uint64_t fnv1a64(const std::vector<char>& bytes);

/// Writes WAVs, label tables and manifests for every non-empty split.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds,
                   const std::vector<ClipExample>& validation, int sample_rate);

/// Loads one split; labels come from the TSV tables. Clips are returned in
/// manifest order.
std::vector<ClipExample> read_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace freqdyn::datakit

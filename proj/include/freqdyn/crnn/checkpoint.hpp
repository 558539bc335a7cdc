// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "freqdyn/crnn/model.hpp"

// A checkpoint directory holds
//   manifest.txt  one line per tensor: "param <name> <shape>" or "bn <name> <C>"
//   config.yaml   the ModelConfig
//   params.fdyt   FDYT records in manifest order (bn: running mean, then var)
namespace freqdyn::crnn {

template <class T>
void save_params(const std::filesystem::path& dir, const ParamStore<T>& store);

/// Loads tensors into an existing store; names and shapes must match exactly.
template <class T>
void load_params(const std::filesystem::path& dir, ParamStore<T>& store);

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& dir);

ModelConfig load_checkpoint_config(const std::filesystem::path& dir);

}  // namespace freqdyn::crnn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "freqdyn/dynconv/context.hpp"

namespace freqdyn::evalkit {

/// Rows are attention vectors w in R^K.
using VectorSet = Eigen::MatrixXd;

/// (1/N) sum_i ||mean_j w_j - w_i||^2. Needs N >= 2.
double attention_variance(const VectorSet& w);

struct PcaResult {
  Eigen::MatrixXd coords;     // N x 2
  Eigen::Vector2d explained;  // variance along each component
  Eigen::Vector2d ratio;      // explained / total variance
  Eigen::MatrixXd components; // K x 2, unit columns
};

/// Top-2 principal components of mean-centred rows. Each component's sign is
/// fixed so that its largest-magnitude entry is positive.
PcaResult pca_project(const VectorSet& w);

/// Key (layer, branch) -> per-frequency vector sets gathered from recordings.
using AttentionVectors = std::map<std::pair<std::size_t, std::size_t>, std::vector<VectorSet>>;

/// Flattens recorder entries (pi: B x K x F x 1) into per-frequency sets, one
/// row per recorded clip.
template <class T>
AttentionVectors gather_attention(const std::vector<typename nn::AttentionRecorder<T>::Entry>& entries);

}  // namespace freqdyn::evalkit

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "freqdyn/datakit/synth.hpp"
#include "freqdyn/numerics/tensor.hpp"

namespace freqdyn::evalkit {

using datakit::EventInterval;

/// Frame-level class probabilities, T' x n_classes.
struct ScoreMatrix {
  Tensor<float> frames;
  double frame_hop = 0.064;  // seconds per frame

  std::size_t n_frames() const { return frames.dim(0); }
  std::size_t n_classes() const { return frames.dim(1); }
  void validate() const;
};

/// Zeroes every class column whose clip-level probability is below tau.
ScoreMatrix weak_mask(const ScoreMatrix& scores, const std::vector<float>& weak, double tau);

/// Per-class sliding median over time; the window shrinks at the edges
/// (centered and clipped). Even-length windows at the edges use the mean of
/// the two middle values.
ScoreMatrix median_filter(const ScoreMatrix& scores, std::size_t window = 7);

/// Maximal runs of frames >= threshold, as [start*hop, (end+1)*hop).
std::vector<EventInterval> decode_events(const ScoreMatrix& scores, double threshold = 0.5);

/// Frame i of class c is set iff its center (i + 0.5) * hop falls inside an
/// event of class c. Inverse of decode_events on binary masks.
Tensor<float> rasterize(const std::vector<EventInterval>& events, std::size_t n_frames,
                        std::size_t n_classes, double frame_hop);

}  // namespace freqdyn::evalkit

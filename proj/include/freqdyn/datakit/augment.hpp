// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>

#include "freqdyn/datakit/synth.hpp"
#include "freqdyn/numerics/tensor.hpp"

// Feature-space augmentations on one clip. Features are n_mels x T; strong
// targets are T' x n_classes at the model's output frame rate, with
// T = pool * T'. Transforms that move or remove frames apply the same change
// to the targets; spectral transforms leave targets alone.
namespace freqdyn::datakit {

struct Sample {
  Tensor<float> mel;     // n_mels x T
  Tensor<float> strong;  // T' x n_classes (zeros unless strong)
  Tensor<float> weak;    // n_classes
  Supervision supervision = Supervision::strong;
};

/// X = lambda X_a + (1 - lambda) X_b, targets blended identically.
Sample mixup(const Sample& a, const Sample& b, double lambda);

/// Mixup coefficient from Beta(alpha, alpha).
double sample_beta(double alpha, std::mt19937_64& rng);

enum class FilterKind { step, linear };

/// Random band gains in dB added in the log-magnitude domain (the input is
/// un-normalized natural-log mel). `bands` is drawn from [min_bands, max_bands]
/// and each gain from [-db_range, db_range].
Tensor<float> filter_augment(const Tensor<float>& logmel, FilterKind kind, std::size_t min_bands,
                             std::size_t max_bands, double db_range, std::mt19937_64& rng);

/// Zeroes one contiguous frame span of width in [0, max_frames], aligned to
/// `pool` so the same target frames can be zeroed.
void mask_time(Sample& s, std::size_t max_frames, std::size_t pool, std::mt19937_64& rng);

/// Zeroes one contiguous band of width in [0, max_bins].
void mask_freq(Tensor<float>& mel, std::size_t max_bins, std::mt19937_64& rng);

/// Circular shift by a random multiple of `pool` in [-max_shift, max_shift]
/// frames; targets roll by the pooled amount. Returns the feature shift.
long frame_shift(Sample& s, std::size_t max_shift, std::size_t pool, std::mt19937_64& rng);

/// Deterministic roll used by frame_shift.
void roll_frames(Sample& s, long shift, std::size_t pool);

void add_noise(Tensor<float>& mel, double sigma, std::mt19937_64& rng);

}  // namespace freqdyn::datakit

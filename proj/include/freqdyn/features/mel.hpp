// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "freqdyn/numerics/tensor.hpp"

namespace freqdyn::features {

struct MelConfig {
  double sample_rate = 16000.0;
  std::size_t n_fft = 2048;
  std::size_t hop = 256;
  std::size_t n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;  // capped at Nyquist

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

inline constexpr double kLogFloor = 1e-6;

/// Frames produced for a wave of `len` samples: 1 + floor(len / hop).
std::size_t frame_count(std::size_t len, const MelConfig& cfg);

/// Hann-windowed, reflect-padded magnitude STFT, (n_fft/2+1) x T.
Tensor<double> stft_magnitude(std::span<const double> wave, const MelConfig& cfg);

/// Slaney-scale, Slaney-normalized triangular filterbank, n_mels x (n_fft/2+1).
Tensor<double> mel_filterbank(const MelConfig& cfg);

/// Filterbank times spectrogram, n_mels x T.
Tensor<double> mel_project(const Tensor<double>& spec, const MelConfig& cfg);

/// log(mel + 1e-6).
Tensor<double> log_compress(const Tensor<double>& mel);

/// Whole-clip min-max scaling to [0, 1]; a constant clip maps to zeros.
template <class T>
Tensor<T> minmax_normalize(const Tensor<T>& x);

/// log_compress followed by minmax_normalize.
Tensor<double> logmel_normalize(const Tensor<double>& mel);

/// wave -> un-normalized log-mel, n_mels x T. Augmentations operate on this
/// and normalization happens afterwards.
Tensor<double> log_mel(std::span<const double> wave, const MelConfig& cfg);

}  // namespace freqdyn::features

// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/features/mel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace freqdyn::features {
namespace {

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex g_plan_mu;

double hz_to_mel(double f) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return f >= min_log_hz ? min_log_mel + std::log(f / min_log_hz) / logstep : f / f_sp;
}

double mel_to_hz(double m) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return m >= min_log_mel ? min_log_hz * std::exp(logstep * (m - min_log_mel)) : f_sp * m;
}

// Reflect index into [0, n) without repeating the edge sample.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (static_cast<std::ptrdiff_t>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

}  // namespace

void MelConfig::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("mel: sample_rate must be positive");
  if (n_fft < 2) throw std::invalid_argument("mel: n_fft must be >= 2");
  if (hop == 0 || hop > n_fft) throw std::invalid_argument("mel: hop must be in [1, n_fft]");
  if (n_mels == 0 || n_mels > n_fft / 2 + 1) {
    throw std::invalid_argument("mel: n_mels must be in [1, n_fft/2+1]");
  }
  if (fmin < 0 || fmin >= std::min(fmax, sample_rate / 2)) {
    throw std::invalid_argument("mel: need 0 <= fmin < min(fmax, sample_rate/2)");
  }
}

std::size_t frame_count(std::size_t len, const MelConfig& cfg) { return 1 + len / cfg.hop; }

Tensor<double> stft_magnitude(std::span<const double> wave, const MelConfig& cfg) {
  cfg.validate();
  if (wave.empty()) throw std::invalid_argument("stft: empty wave");
  const std::size_t n = cfg.n_fft, bins = n / 2 + 1, frames = frame_count(wave.size(), cfg);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(n / 2);

  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }

  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(g_plan_mu);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  Tensor<double> spec({bins, frames});
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * cfg.hop) - half;
    for (std::size_t i = 0; i < n; ++i) {
      in[i] = window[i] * wave[reflect(start + static_cast<std::ptrdiff_t>(i), wave.size())];
    }
    fftw_execute(plan);
    for (std::size_t k = 0; k < bins; ++k) spec.at(k, t) = std::hypot(out[k][0], out[k][1]);
  }
  {
    std::lock_guard lock(g_plan_mu);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return spec;
}

Tensor<double> mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.n_fft / 2 + 1, M = cfg.n_mels;
  const double fmax = std::min(cfg.fmax, cfg.sample_rate / 2);
  const double m0 = hz_to_mel(cfg.fmin), m1 = hz_to_mel(fmax);
  std::vector<double> hz(M + 2);
  for (std::size_t i = 0; i < M + 2; ++i) {
    hz[i] = mel_to_hz(m0 + (m1 - m0) * static_cast<double>(i) / static_cast<double>(M + 1));
  }
  Tensor<double> fb({M, bins});
  for (std::size_t m = 0; m < M; ++m) {
    const double enorm = 2.0 / (hz[m + 2] - hz[m]);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      const double lower = (f - hz[m]) / (hz[m + 1] - hz[m]);
      const double upper = (hz[m + 2] - f) / (hz[m + 2] - hz[m + 1]);
      fb.at(m, k) = enorm * std::max(0.0, std::min(lower, upper));
    }
  }
  return fb;
}

Tensor<double> mel_project(const Tensor<double>& spec, const MelConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  if (spec.rank() != 2 || spec.dim(0) != bins) {
    throw ShapeError("mel_project: expected " + std::to_string(bins) + " x T spectrogram, got " +
                     shape_str(spec.shape()));
  }
  const Tensor<double> fb = mel_filterbank(cfg);
  const std::size_t M = cfg.n_mels, T = spec.dim(1);
  Tensor<double> mel({M, T});
  for (std::size_t m = 0; m < M; ++m) {
    double* row = mel.raw() + m * T;
    for (std::size_t k = 0; k < bins; ++k) {
      const double w = fb.at(m, k);
      if (w == 0.0) continue;
      const double* s = spec.raw() + k * T;
      for (std::size_t t = 0; t < T; ++t) row[t] += w * s[t];
    }
  }
  return mel;
}

Tensor<double> log_compress(const Tensor<double>& mel) {
  Tensor<double> out(mel.shape());
  for (std::size_t i = 0; i < mel.size(); ++i) out[i] = std::log(mel[i] + kLogFloor);
  return out;
}

template <class T>
Tensor<T> minmax_normalize(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  if (x.empty()) return out;
  const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<T>((static_cast<double>(x[i]) - *lo) / range);
  }
  return out;
}

template Tensor<float> minmax_normalize<float>(const Tensor<float>&);
template Tensor<double> minmax_normalize<double>(const Tensor<double>&);

Tensor<double> logmel_normalize(const Tensor<double>& mel) {
  return minmax_normalize(log_compress(mel));
}

Tensor<double> log_mel(std::span<const double> wave, const MelConfig& cfg) {
  return log_compress(mel_project(stft_magnitude(wave, cfg), cfg));
}

}  // namespace freqdyn::features

// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/datakit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace freqdyn::datakit {
namespace {

void roll_rows(Tensor<float>& t, std::size_t rows, std::size_t cols, long shift, bool time_is_row) {
  if (cols == 0 || rows == 0) return;
  Tensor<float> out(t.shape());
  if (time_is_row) {
    // rows are frames
    const long n = static_cast<long>(rows);
    for (long r = 0; r < n; ++r) {
      const long dst = ((r + shift) % n + n) % n;
      std::copy_n(t.raw() + r * cols, cols, out.raw() + dst * cols);
    }
  } else {
    const long n = static_cast<long>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (long c = 0; c < n; ++c) {
        const long dst = ((c + shift) % n + n) % n;
        out[r * cols + dst] = t[r * cols + c];
      }
    }
  }
  t = std::move(out);
}

}  // namespace

Sample mixup(const Sample& a, const Sample& b, double lambda) {
  if (a.supervision != b.supervision) throw std::invalid_argument("mixup: supervision kinds differ");
  if (a.mel.shape() != b.mel.shape() || a.strong.shape() != b.strong.shape() ||
      a.weak.shape() != b.weak.shape()) {
    throw ShapeError("mixup: feature or target shapes differ");
  }
  auto blend = [lambda](const Tensor<float>& x, const Tensor<float>& y) {
    Tensor<float> o(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      o[i] = static_cast<float>(lambda * x[i] + (1.0 - lambda) * y[i]);
    }
    return o;
  };
  if (lambda == 1.0) return a;
  return {blend(a.mel, b.mel), blend(a.strong, b.strong), blend(a.weak, b.weak), a.supervision};
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng), y = g(rng);
  return x + y > 0 ? x / (x + y) : 0.5;
}

Tensor<float> filter_augment(const Tensor<float>& logmel, FilterKind kind, std::size_t min_bands,
                             std::size_t max_bands, double db_range, std::mt19937_64& rng) {
  require_rank(logmel, 2, "filter_augment");
  const std::size_t F = logmel.dim(0), T = logmel.dim(1);
  if (min_bands < 1 || max_bands < min_bands) throw std::invalid_argument("filter_augment: need 1 <= min_bands <= max_bands");
  if (max_bands > F) throw std::invalid_argument("filter_augment: more bands than mel bins");
  std::uniform_int_distribution<std::size_t> nb(min_bands, max_bands);
  const std::size_t bands = nb(rng);
  // interior boundaries, distinct, in [1, F-1]
  std::vector<std::size_t> cuts;
  if (bands > 1) {
    std::vector<std::size_t> pool(F - 1);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i + 1;
    std::shuffle(pool.begin(), pool.end(), rng);
    cuts.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(bands - 1));
    std::sort(cuts.begin(), cuts.end());
  }
  std::uniform_real_distribution<double> gain(-db_range, db_range);
  const double to_log = std::log(10.0) / 20.0;  // dB on magnitude -> natural log
  std::vector<double> offset(F);
  if (kind == FilterKind::step) {
    std::size_t lo = 0;
    for (std::size_t b = 0; b < bands; ++b) {
      const std::size_t hi = b + 1 < bands ? cuts[b] : F;
      const double g = db_range > 0 ? gain(rng) : 0.0;
      for (std::size_t f = lo; f < hi; ++f) offset[f] = g * to_log;
      lo = hi;
    }
  } else {
    // gains at knots 0, cuts..., F-1, linearly interpolated in between
    std::vector<std::size_t> knots{0};
    knots.insert(knots.end(), cuts.begin(), cuts.end());
    if (knots.back() != F - 1) knots.push_back(F - 1);
    std::vector<double> g(knots.size());
    for (auto& v : g) v = db_range > 0 ? gain(rng) : 0.0;
    for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
      const double span = static_cast<double>(knots[k + 1] - knots[k]);
      for (std::size_t f = knots[k]; f <= knots[k + 1]; ++f) {
        const double w = span > 0 ? (f - knots[k]) / span : 0.0;
        offset[f] = ((1 - w) * g[k] + w * g[k + 1]) * to_log;
      }
    }
    if (knots.size() == 1) offset[0] = g[0] * to_log;
  }
  Tensor<float> out(logmel.shape());
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < T; ++t) out.at(f, t) = static_cast<float>(logmel.at(f, t) + offset[f]);
  }
  return out;
}

void mask_time(Sample& s, std::size_t max_frames, std::size_t pool, std::mt19937_64& rng) {
  require_rank(s.mel, 2, "mask_time");
  if (pool == 0) throw std::invalid_argument("mask_time: pool must be >= 1");
  const std::size_t T = s.mel.dim(1), Tp = T / pool;
  const std::size_t max_units = std::min(max_frames / pool, Tp);
  if (max_units == 0) return;
  std::uniform_int_distribution<std::size_t> wd(0, max_units);
  const std::size_t w = wd(rng);
  if (w == 0) return;
  std::uniform_int_distribution<std::size_t> sd(0, Tp - w);
  const std::size_t start = sd(rng);
  const std::size_t F = s.mel.dim(0);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = start * pool; t < (start + w) * pool; ++t) s.mel.at(f, t) = 0.0f;
  }
  if (s.strong.rank() == 2) {
    const std::size_t C = s.strong.dim(1);
    for (std::size_t t = start; t < start + w && t < s.strong.dim(0); ++t) {
      for (std::size_t c = 0; c < C; ++c) s.strong.at(t, c) = 0.0f;
    }
  }
}

void mask_freq(Tensor<float>& mel, std::size_t max_bins, std::mt19937_64& rng) {
  require_rank(mel, 2, "mask_freq");
  const std::size_t F = mel.dim(0), T = mel.dim(1);
  std::uniform_int_distribution<std::size_t> wd(0, std::min(max_bins, F));
  const std::size_t w = wd(rng);
  if (w == 0) return;
  std::uniform_int_distribution<std::size_t> sd(0, F - w);
  const std::size_t start = sd(rng);
  for (std::size_t f = start; f < start + w; ++f) {
    for (std::size_t t = 0; t < T; ++t) mel.at(f, t) = 0.0f;
  }
}

void roll_frames(Sample& s, long shift, std::size_t pool) {
  if (pool == 0 || shift % static_cast<long>(pool) != 0) {
    throw std::invalid_argument("roll_frames: shift must be a multiple of the pooling");
  }
  require_rank(s.mel, 2, "roll_frames");
  roll_rows(s.mel, s.mel.dim(0), s.mel.dim(1), shift, false);
  if (s.strong.rank() == 2 && s.strong.size() > 0) {
    roll_rows(s.strong, s.strong.dim(0), s.strong.dim(1), shift / static_cast<long>(pool), true);
  }
}

long frame_shift(Sample& s, std::size_t max_shift, std::size_t pool, std::mt19937_64& rng) {
  const long units = static_cast<long>(max_shift / std::max<std::size_t>(pool, 1));
  std::uniform_int_distribution<long> d(-units, units);
  const long shift = d(rng) * static_cast<long>(pool);
  if (shift != 0) roll_frames(s, shift, pool);
  return shift;
}

void add_noise(Tensor<float>& mel, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> g(0.0, sigma);
  for (auto& v : mel.data()) v = static_cast<float>(v + g(rng));
}

}  // namespace freqdyn::datakit

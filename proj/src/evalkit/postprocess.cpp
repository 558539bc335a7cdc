// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/evalkit/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace freqdyn::evalkit {

void ScoreMatrix::validate() const {
  require_rank(frames, 2, "ScoreMatrix");
  if (!(frame_hop > 0)) throw std::invalid_argument("ScoreMatrix: frame_hop must be > 0");
  for (float v : frames.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::domain_error("ScoreMatrix: values must lie in [0,1]");
  }
}

ScoreMatrix weak_mask(const ScoreMatrix& scores, const std::vector<float>& weak, double tau) {
  require_rank(scores.frames, 2, "weak_mask");
  if (weak.size() != scores.n_classes()) {
    throw ShapeError("weak_mask: " + std::to_string(weak.size()) + " clip scores for " +
                     std::to_string(scores.n_classes()) + " classes");
  }
  ScoreMatrix out = scores;
  for (std::size_t c = 0; c < weak.size(); ++c) {
    if (weak[c] >= tau) continue;
    for (std::size_t t = 0; t < out.n_frames(); ++t) out.frames.at(t, c) = 0.0f;
  }
  return out;
}

ScoreMatrix median_filter(const ScoreMatrix& scores, std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw std::invalid_argument("median_filter: window must be odd, got " + std::to_string(window));
  }
  require_rank(scores.frames, 2, "median_filter");
  ScoreMatrix out = scores;
  const std::size_t T = scores.n_frames(), C = scores.n_classes(), h = window / 2;
  std::vector<float> buf;
  buf.reserve(window);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t lo = t >= h ? t - h : 0, hi = std::min(T, t + h + 1);
      buf.clear();
      for (std::size_t i = lo; i < hi; ++i) buf.push_back(scores.frames.at(i, c));
      const std::size_t n = buf.size(), mid = n / 2;
      std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
      float m = buf[mid];
      if (n % 2 == 0) {
        const float below = *std::max_element(buf.begin(), buf.begin() + mid);
        m = 0.5f * (below + m);
      }
      out.frames.at(t, c) = m;
    }
  }
  return out;
}

std::vector<EventInterval> decode_events(const ScoreMatrix& scores, double threshold) {
  require_rank(scores.frames, 2, "decode_events");
  if (!(threshold > 0 && threshold < 1)) {
    throw std::invalid_argument("decode_events: threshold must lie in (0,1)");
  }
  std::vector<EventInterval> events;
  const std::size_t T = scores.n_frames();
  for (std::size_t c = 0; c < scores.n_classes(); ++c) {
    std::size_t t = 0;
    while (t < T) {
      if (scores.frames.at(t, c) < threshold) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      while (t < T && scores.frames.at(t, c) >= threshold) ++t;
      events.push_back({c, static_cast<double>(start) * scores.frame_hop,
                        static_cast<double>(t) * scores.frame_hop});
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.onset < b.onset; });
  return events;
}

Tensor<float> rasterize(const std::vector<EventInterval>& events, std::size_t n_frames,
                        std::size_t n_classes, double frame_hop) {
  Tensor<float> m({n_frames, n_classes});
  for (const auto& e : events) {
    if (e.class_id >= n_classes) throw std::out_of_range("rasterize: class id out of range");
    for (std::size_t i = 0; i < n_frames; ++i) {
      const double center = (static_cast<double>(i) + 0.5) * frame_hop;
      if (center >= e.onset && center < e.offset) m.at(i, e.class_id) = 1.0f;
    }
  }
  return m;
}

}  // namespace freqdyn::evalkit

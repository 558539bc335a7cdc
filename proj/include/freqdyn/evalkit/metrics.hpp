// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "freqdyn/evalkit/postprocess.hpp"

namespace freqdyn::evalkit {

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1() const;
};

struct MatchResult {
  std::vector<ClassCounts> per_class;

  MatchResult() = default;
  explicit MatchResult(std::size_t n_classes) : per_class(n_classes) {}

  ClassCounts total() const;
  /// Mean F1 over classes that occur in the reference or the hypothesis.
  double macro_f1() const;
  /// F1 of the pooled counts.
  double micro_f1() const;
  MatchResult& operator+=(const MatchResult& o);
};

struct CollarSpec {
  double onset_collar = 0.2;   // seconds
  double offset_ratio = 0.2;   // of the reference duration
  double offset_floor = 0.2;   // seconds
};

/// True when `hyp` may match `ref` under the collar rule.
bool collar_match(const EventInterval& ref, const EventInterval& hyp, const CollarSpec& spec = {});

/// One-to-one matching per class. Hypotheses are visited in onset order and
/// each takes the compatible unmatched reference whose window of compatible
/// hypotheses closes first.
MatchResult collar_f1(const std::vector<EventInterval>& ref, const std::vector<EventInterval>& hyp,
                      std::size_t n_classes, const CollarSpec& spec = {});

/// Per-clip scores plus references.
struct ScoredClip {
  ScoreMatrix scores;
  std::vector<EventInterval> ref;
};

/// Intersection-based counts at one threshold: a reference is detected when
/// same-class hypotheses cover at least `min_cover` of it; a hypothesis is a
/// false positive when same-class references cover less than `min_cover` of it.
MatchResult intersection_counts(const std::vector<EventInterval>& ref,
                                const std::vector<EventInterval>& hyp, std::size_t n_classes,
                                double min_cover = 0.5);

struct SweepPoint {
  double threshold = 0;
  double f1 = 0;  // macro over classes
};

struct SweepResult {
  std::vector<SweepPoint> curve;
  double proxy = 0;  // mean of curve F1
  static const char* disclaimer();
};

std::vector<double> default_thresholds();  // 0.01, 0.03, ..., 0.99

SweepResult threshold_sweep(const std::vector<ScoredClip>& clips,
                            const std::vector<double>& thresholds = default_thresholds(),
                            double min_cover = 0.5);

}  // namespace freqdyn::evalkit

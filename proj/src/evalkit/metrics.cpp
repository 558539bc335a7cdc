// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/evalkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace freqdyn::evalkit {
namespace {

std::vector<EventInterval> of_class(const std::vector<EventInterval>& ev, std::size_t c) {
  std::vector<EventInterval> out;
  for (const auto& e : ev) {
    if (e.class_id == c) out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.onset < b.onset || (a.onset == b.onset && a.offset < b.offset);
  });
  return out;
}

void check_classes(const std::vector<EventInterval>& ev, std::size_t n_classes, const char* what) {
  for (const auto& e : ev) {
    if (e.class_id >= n_classes) {
      throw std::out_of_range(std::string(what) + ": class id " + std::to_string(e.class_id) +
                              " out of range");
    }
    if (!(e.onset < e.offset)) throw std::invalid_argument(std::string(what) + ": onset >= offset");
  }
}

double overlap(const EventInterval& a, const EventInterval& b) {
  return std::max(0.0, std::min(a.offset, b.offset) - std::max(a.onset, b.onset));
}

}  // namespace

double ClassCounts::f1() const {
  const std::size_t d = 2 * tp + fp + fn;
  return d == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(d);
}

ClassCounts MatchResult::total() const {
  ClassCounts t;
  for (const auto& c : per_class) {
    t.tp += c.tp;
    t.fp += c.fp;
    t.fn += c.fn;
  }
  return t;
}

double MatchResult::macro_f1() const {
  double s = 0;
  std::size_t n = 0;
  for (const auto& c : per_class) {
    if (c.tp + c.fp + c.fn == 0) continue;
    s += c.f1();
    ++n;
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

double MatchResult::micro_f1() const { return total().f1(); }

MatchResult& MatchResult::operator+=(const MatchResult& o) {
  if (per_class.empty()) per_class.resize(o.per_class.size());
  if (o.per_class.size() != per_class.size()) throw ShapeError("MatchResult: class counts differ");
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    per_class[c].tp += o.per_class[c].tp;
    per_class[c].fp += o.per_class[c].fp;
    per_class[c].fn += o.per_class[c].fn;
  }
  return *this;
}

bool collar_match(const EventInterval& ref, const EventInterval& hyp, const CollarSpec& spec) {
  if (ref.class_id != hyp.class_id) return false;
  const double off_tol = std::max(spec.offset_floor, spec.offset_ratio * (ref.offset - ref.onset));
  // tiny slack so collars written in decimal seconds compare as intended
  constexpr double slack = 1e-9;
  return std::abs(hyp.onset - ref.onset) <= spec.onset_collar + slack &&
         std::abs(hyp.offset - ref.offset) <= off_tol + slack;
}

MatchResult collar_f1(const std::vector<EventInterval>& ref, const std::vector<EventInterval>& hyp,
                      std::size_t n_classes, const CollarSpec& spec) {
  check_classes(ref, n_classes, "collar_f1 ref");
  check_classes(hyp, n_classes, "collar_f1 hyp");
  MatchResult res(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto r = of_class(ref, c), h = of_class(hyp, c);
    // last hypothesis index each reference can still accept
    std::vector<std::ptrdiff_t> closes(r.size(), -1);
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t j = 0; j < h.size(); ++j) {
        if (collar_match(r[i], h[j], spec)) closes[i] = static_cast<std::ptrdiff_t>(j);
      }
    }
    std::vector<bool> used(r.size(), false);
    std::size_t tp = 0;
    for (std::size_t j = 0; j < h.size(); ++j) {
      std::size_t best = r.size();
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (used[i] || !collar_match(r[i], h[j], spec)) continue;
        if (best == r.size() || closes[i] < closes[best]) best = i;
      }
      if (best < r.size()) {
        used[best] = true;
        ++tp;
      }
    }
    res.per_class[c] = {tp, h.size() - tp, r.size() - tp};
  }
  return res;
}

MatchResult intersection_counts(const std::vector<EventInterval>& ref,
                                const std::vector<EventInterval>& hyp, std::size_t n_classes,
                                double min_cover) {
  check_classes(ref, n_classes, "intersection ref");
  check_classes(hyp, n_classes, "intersection hyp");
  MatchResult res(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto r = of_class(ref, c), h = of_class(hyp, c);
    ClassCounts& k = res.per_class[c];
    for (const auto& ri : r) {
      double cover = 0;
      for (const auto& hj : h) cover += overlap(ri, hj);
      if (cover >= min_cover * (ri.offset - ri.onset)) ++k.tp;
      else ++k.fn;
    }
    for (const auto& hj : h) {
      double cover = 0;
      for (const auto& ri : r) cover += overlap(ri, hj);
      if (cover < min_cover * (hj.offset - hj.onset)) ++k.fp;
    }
  }
  return res;
}

const char* SweepResult::disclaimer() {
  return "proxy-PSDS, not comparable to paper PSDS1";
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 50; ++i) t.push_back(0.01 + 0.02 * i);
  return t;
}

SweepResult threshold_sweep(const std::vector<ScoredClip>& clips, const std::vector<double>& thresholds,
                            double min_cover) {
  if (thresholds.size() < 2) throw std::invalid_argument("threshold_sweep: need at least 2 thresholds");
  SweepResult out;
  for (double th : thresholds) {
    MatchResult total;
    for (const auto& clip : clips) {
      const auto hyp = decode_events(clip.scores, th);
      total += intersection_counts(clip.ref, hyp, clip.scores.n_classes(), min_cover);
    }
    out.curve.push_back({th, total.macro_f1()});
  }
  double s = 0;
  for (const auto& p : out.curve) s += p.f1;
  out.proxy = s / static_cast<double>(out.curve.size());
  return out;
}

}  // namespace freqdyn::evalkit

// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/datakit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "freqdyn/common/parallel.hpp"
#include "freqdyn/common/rng.hpp"

namespace freqdyn::datakit {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double rms(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

// Paul Kellet's economy pink filter over white noise.
std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (auto& y : out) {
    const double w = g(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    y = b0 + b1 + b2 + w * 0.1848;
  }
  return out;
}

std::vector<double> render(EventClass cls, std::size_t n, double sr, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> s(n, 0.0);
  switch (cls) {
    case EventClass::tone: {
      const double f = 400.0 + 2600.0 * u(rng);
      const double ph = kTwoPi * u(rng);
      for (std::size_t i = 0; i < n; ++i) s[i] = std::sin(kTwoPi * f * i / sr + ph);
      break;
    }
    case EventClass::harmonic: {
      const double f0 = 150.0 + 350.0 * u(rng);
      for (int h = 1; h <= 6; ++h) {
        const double ph = kTwoPi * u(rng);
        const double a = 1.0 / h;
        for (std::size_t i = 0; i < n; ++i) s[i] += a * std::sin(kTwoPi * f0 * h * i / sr + ph);
      }
      break;
    }
    case EventClass::chirp: {
      double f1 = 500.0 + 1500.0 * u(rng);
      double f2 = 3000.0 + 3000.0 * u(rng);
      if (u(rng) < 0.5) std::swap(f1, f2);
      const double dur = static_cast<double>(n) / sr;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / sr;
        s[i] = std::sin(kTwoPi * (f1 * t + 0.5 * (f2 - f1) * t * t / dur));
      }
      break;
    }
    case EventClass::noise_burst: {
      // white noise with a slow amplitude wobble
      const double rate = 2.0 + 4.0 * u(rng);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = g(rng) * (0.75 + 0.25 * std::sin(kTwoPi * rate * i / sr));
      }
      break;
    }
    case EventClass::impulse_train: {
      const double rate = 8.0 + 12.0 * u(rng);
      const std::size_t period = static_cast<std::size_t>(sr / rate);
      const std::size_t click = static_cast<std::size_t>(0.005 * sr);
      for (std::size_t start = 0; start < n; start += period) {
        for (std::size_t k = 0; k < click && start + k < n; ++k) {
          s[start + k] = g(rng) * std::exp(-5.0 * static_cast<double>(k) / click);
        }
      }
      break;
    }
  }
  // 10 ms raised-cosine fades
  const std::size_t fade = std::min<std::size_t>(static_cast<std::size_t>(0.01 * sr), n / 2);
  for (std::size_t i = 0; i < fade; ++i) {
    const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * i / fade);
    s[i] *= w;
    s[n - 1 - i] *= w;
  }
  return s;
}

}  // namespace

std::string to_string(Supervision s) {
  switch (s) {
    case Supervision::strong: return "strong";
    case Supervision::weak: return "weak";
    case Supervision::unlabeled: return "unlabeled";
  }
  return "?";
}

const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names{"tone", "harmonic", "chirp", "noise_burst",
                                                          "impulse_train"};
  return names;
}

std::size_t class_index(const std::string& name) {
  const auto& n = class_names();
  const auto it = std::find(n.begin(), n.end(), name);
  if (it == n.end()) throw std::invalid_argument("unknown event class \"" + name + "\"");
  return static_cast<std::size_t>(it - n.begin());
}

std::vector<std::size_t> classes_of(const std::vector<EventInterval>& events) {
  std::vector<std::size_t> out;
  for (const auto& e : events) out.push_back(e.class_id);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ClipExample synth_clip(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.palette.empty()) throw std::invalid_argument("synth_clip: empty class palette");
  if (cfg.min_events < 1 || cfg.max_events < cfg.min_events) {
    throw std::invalid_argument("synth_clip: need 1 <= min_events <= max_events");
  }
  if (!(cfg.min_event_seconds > 0) || cfg.max_event_seconds < cfg.min_event_seconds ||
      cfg.max_event_seconds > cfg.clip_seconds) {
    throw std::invalid_argument("synth_clip: bad event duration range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double sr = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(cfg.clip_seconds * sr));

  ClipExample clip;
  clip.wave = pink_noise(n, rng);
  const double bg = rms(clip.wave);
  const double bg_target = 0.02;
  for (double& x : clip.wave) x *= bg_target / bg;

  std::uniform_int_distribution<std::size_t> count(cfg.min_events, cfg.max_events);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.palette.size() - 1);
  const std::size_t want = count(rng);
  for (std::size_t e = 0, attempts = 0; e < want && attempts < 50; ++attempts) {
    const EventClass cls = cfg.palette[pick(rng)];
    const double dur = cfg.min_event_seconds + (cfg.max_event_seconds - cfg.min_event_seconds) * u(rng);
    // onsets on the sample grid so labels are exact
    const auto len = static_cast<std::size_t>(std::llround(dur * sr));
    const auto start = static_cast<std::size_t>(u(rng) * static_cast<double>(n - len));
    const double onset = start / sr, offset = (start + len) / sr;
    const auto id = static_cast<std::size_t>(cls);
    const bool clash = std::any_of(clip.events.begin(), clip.events.end(), [&](const EventInterval& o) {
      return o.class_id == id && onset < o.offset && o.onset < offset;
    });
    if (clash) continue;
    std::vector<double> s = render(cls, len, sr, rng);
    const double snr = cfg.snr_min_db + (cfg.snr_max_db - cfg.snr_min_db) * u(rng);
    const double gain = bg_target * std::pow(10.0, snr / 20.0) / std::max(rms(s), 1e-12);
    for (std::size_t i = 0; i < len; ++i) clip.wave[start + i] += gain * s[i];
    clip.events.push_back({id, onset, offset});
    ++e;
  }
  std::sort(clip.events.begin(), clip.events.end(), [](const EventInterval& a, const EventInterval& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.class_id < b.class_id;
  });
  double peak = 0;
  for (double x : clip.wave) peak = std::max(peak, std::abs(x));
  if (peak > 0.9) {
    for (double& x : clip.wave) x *= 0.9 / peak;
  }
  clip.weak = classes_of(clip.events);
  clip.supervision = Supervision::strong;
  return clip;
}

Dataset make_dataset(std::uint64_t seed, std::size_t n_strong, std::size_t n_weak, std::size_t n_unlabeled,
                     const SynthConfig& cfg) {
  Dataset ds;
  auto fill = [&](std::vector<ClipExample>& out, std::size_t count, Supervision sup) {
    out.resize(count);
    const std::string split = to_string(sup);
    parallel_for(count, [&](std::size_t i) {
      ClipExample c = synth_clip(derive_seed(seed, "dataset." + split, i), cfg);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s_%05zu.wav", split.c_str(), i);
      c.name = buf;
      c.supervision = sup;
      if (sup != Supervision::strong) c.events.clear();
      if (sup == Supervision::unlabeled) c.weak.clear();
      out[i] = std::move(c);
    });
  };
  fill(ds.strong, n_strong, Supervision::strong);
  fill(ds.weak, n_weak, Supervision::weak);
  fill(ds.unlabeled, n_unlabeled, Supervision::unlabeled);
  return ds;
}

}  // namespace freqdyn::datakit

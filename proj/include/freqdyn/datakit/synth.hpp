// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace freqdyn::datakit {

struct EventInterval {
  std::size_t class_id = 0;
  double onset = 0;   // seconds
  double offset = 0;  // seconds
  friend bool operator==(const EventInterval&, const EventInterval&) = default;
};

enum class Supervision { strong, weak, unlabeled };
std::string to_string(Supervision s);

/// Parametric event classes: stationary, harmonic, non-stationary, noisy,
/// transient.
enum class EventClass : std::size_t { tone = 0, harmonic, chirp, noise_burst, impulse_train };
inline constexpr std::size_t kNumClasses = 5;
const std::array<std::string, kNumClasses>& class_names();
std::size_t class_index(const std::string& name);

struct SynthConfig {
  double clip_seconds = 10.0;
  int sample_rate = 16000;
  std::size_t min_events = 1;
  std::size_t max_events = 4;
  double snr_min_db = 6.0;
  double snr_max_db = 30.0;
  double min_event_seconds = 0.5;
  double max_event_seconds = 3.0;
  std::vector<EventClass> palette{EventClass::tone, EventClass::harmonic, EventClass::chirp,
                                  EventClass::noise_burst, EventClass::impulse_train};
};

struct ClipExample {
  std::string name;
  std::vector<double> wave;
  Supervision supervision = Supervision::strong;
  std::vector<EventInterval> events;  // empty unless strong
  std::vector<std::size_t> weak;      // sorted class set; empty when unlabeled
};

/// Pink-noise background plus events with exact labels. Events of the same
/// class never overlap. The result depends only on `seed` and `cfg`.
ClipExample synth_clip(std::uint64_t seed, const SynthConfig& cfg);

/// Sorted, de-duplicated classes present in `events`.
std::vector<std::size_t> classes_of(const std::vector<EventInterval>& events);

struct Dataset {
  std::vector<ClipExample> strong, weak, unlabeled;
};

/// Three splits generated from disjoint seed streams. Weak clips keep only
/// the class set, unlabeled clips keep nothing.
Dataset make_dataset(std::uint64_t seed, std::size_t n_strong, std::size_t n_weak,
                     std::size_t n_unlabeled, const SynthConfig& cfg = {});

}  // namespace freqdyn::datakit

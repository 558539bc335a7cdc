// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "freqdyn/crnn/config.hpp"
#include "freqdyn/datakit/synth.hpp"
#include "freqdyn/evalkit/pipeline.hpp"
#include "freqdyn/features/mel.hpp"
#include "freqdyn/trainer/trainer.hpp"

namespace freqdyn {

struct DataConfig {
  std::size_t n_strong = 64, n_weak = 64, n_unlabeled = 128;
  std::size_t n_val = 32;  // strong-labelled validation clips
  datakit::SynthConfig synth;
};

/// Sections data, features, model, train, eval. The model section starts
/// from `preset` (default "toy-fdy") and applies the remaining keys on top.
struct RunConfig {
  DataConfig data;
  features::MelConfig features;
  std::string preset = "toy-fdy";
  crnn::ModelConfig model;
  trainer::TrainConfig train;
  evalkit::EvalConfig eval;
  bool eval_teacher = false;  // eval.use_teacher
  std::string source;  // document text, echoed into run directories

  /// Toy defaults: toy-fdy model, toy batch composition.
  static RunConfig defaults();

  /// Cross-section checks (n_mels agreement, class count, ...). Throws
  /// crnn::ConfigError.
  void validate() const;
};

/// Parses a YAML document; unknown keys and sections raise crnn::ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Re-resolves the model section from another preset, keeping the other
/// model keys of the document except `variant`.
RunConfig with_preset(const RunConfig& cfg, const std::string& preset);

/// Writes `source` verbatim, or a rendering of the defaults when empty.
void echo_run_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace freqdyn

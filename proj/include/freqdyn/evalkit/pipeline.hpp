// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "freqdyn/crnn/model.hpp"
#include "freqdyn/datakit/augment.hpp"
#include "freqdyn/evalkit/metrics.hpp"

namespace freqdyn::evalkit {

struct EvalConfig {
  double weak_tau = 0.5;
  std::size_t median_window = 7;
  double threshold = 0.5;
  CollarSpec collar;
  double min_cover = 0.5;
};

struct ClipPrediction {
  std::string name;
  ScoreMatrix scores;       // raw strong probabilities
  std::vector<float> weak;  // clip-level probabilities
};

/// Eval-mode inference over clips (un-normalized log-mel samples).
std::vector<ClipPrediction> predict_clips(crnn::Model<float>& model,
                                          const std::vector<datakit::Sample>& clips,
                                          const std::vector<std::string>& names, double frame_hop,
                                          std::size_t batch = 16);

/// weak_mask -> median_filter, the scores every metric sees.
ScoreMatrix postprocess(const ClipPrediction& p, const EvalConfig& cfg);

struct EvalReport {
  std::size_t clips = 0;
  MatchResult collar;
  SweepResult sweep;
};

EvalReport evaluate(const std::vector<ClipPrediction>& preds,
                    const std::vector<std::vector<EventInterval>>& refs, const EvalConfig& cfg);

/// Plain-text report: one row per class, then macro/micro collar F1 and the
/// proxy score with its disclaimer.
std::string format_report(const EvalReport& r, const std::vector<std::string>& class_names);

/// CSV with one row per class: class,tp,fp,fn,precision,recall,f1.
std::string class_csv(const EvalReport& r, const std::vector<std::string>& class_names);

}  // namespace freqdyn::evalkit

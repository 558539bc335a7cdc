// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/evalkit/pipeline.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "freqdyn/features/mel.hpp"

namespace freqdyn::evalkit {

std::vector<ClipPrediction> predict_clips(crnn::Model<float>& model,
                                          const std::vector<datakit::Sample>& clips,
                                          const std::vector<std::string>& names, double frame_hop,
                                          std::size_t batch) {
  if (names.size() != clips.size()) throw std::invalid_argument("predict_clips: names and clips differ in count");
  if (batch == 0) batch = 1;
  std::vector<ClipPrediction> out;
  for (std::size_t i = 0; i < clips.size(); i += batch) {
    const std::size_t n = std::min(batch, clips.size() - i);
    const std::size_t F = clips[i].mel.dim(0), T = clips[i].mel.dim(1);
    Tensor<float> x({n, 1, F, T});
    for (std::size_t b = 0; b < n; ++b) {
      require_shape(clips[i + b].mel, {F, T}, "predict_clips");
      const auto norm = features::minmax_normalize(clips[i + b].mel);
      std::copy(norm.raw(), norm.raw() + F * T, x.raw() + b * F * T);
    }
    const auto pred = model.predict(x);
    const std::size_t Tp = pred.strong.dim(1), C = pred.strong.dim(2);
    for (std::size_t b = 0; b < n; ++b) {
      ClipPrediction p;
      p.name = names[i + b];
      p.scores.frame_hop = frame_hop;
      p.scores.frames = Tensor<float>({Tp, C});
      std::copy_n(pred.strong.raw() + b * Tp * C, Tp * C, p.scores.frames.raw());
      p.weak.assign(pred.weak.raw() + b * C, pred.weak.raw() + (b + 1) * C);
      out.push_back(std::move(p));
    }
  }
  return out;
}

ScoreMatrix postprocess(const ClipPrediction& p, const EvalConfig& cfg) {
  return median_filter(weak_mask(p.scores, p.weak, cfg.weak_tau), cfg.median_window);
}

EvalReport evaluate(const std::vector<ClipPrediction>& preds,
                    const std::vector<std::vector<EventInterval>>& refs, const EvalConfig& cfg) {
  if (preds.size() != refs.size()) throw std::invalid_argument("evaluate: predictions and references differ in count");
  EvalReport r;
  r.clips = preds.size();
  if (preds.empty()) throw std::invalid_argument("evaluate: no clips");
  const std::size_t C = preds[0].scores.n_classes();
  r.collar = MatchResult(C);
  std::vector<ScoredClip> scored;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].scores.n_classes() != C) throw ShapeError("evaluate: class count differs between clips");
    for (const auto& e : refs[i]) {
      if (e.class_id >= C) {
        throw ShapeError("evaluate: reference class " + std::to_string(e.class_id) + " but model has " +
                         std::to_string(C) + " classes");
      }
    }
    ScoreMatrix s = postprocess(preds[i], cfg);
    r.collar += collar_f1(refs[i], decode_events(s, cfg.threshold), C, cfg.collar);
    scored.push_back({std::move(s), refs[i]});
  }
  r.sweep = threshold_sweep(scored, default_thresholds(), cfg.min_cover);
  return r;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

}  // namespace

std::string format_report(const EvalReport& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  char line[160];
  os << "clips: " << r.clips << '\n';
  std::snprintf(line, sizeof line, "%-16s %6s %6s %6s %9s %7s %7s\n", "class", "tp", "fp", "fn", "precision",
                "recall", "f1");
  os << line;
  for (std::size_t c = 0; c < r.collar.per_class.size(); ++c) {
    const auto& k = r.collar.per_class[c];
    const std::string name = c < names.size() ? names[c] : "class" + std::to_string(c);
    std::snprintf(line, sizeof line, "%-16s %6zu %6zu %6zu %9s %7s %7s\n", name.c_str(), k.tp, k.fp, k.fn,
                  num(ratio(k.tp, k.tp + k.fp)).c_str(), num(ratio(k.tp, k.tp + k.fn)).c_str(),
                  num(k.f1()).c_str());
    os << line;
  }
  os << "macro collar F1: " << num(r.collar.macro_f1()) << '\n';
  os << "micro collar F1: " << num(r.collar.micro_f1()) << '\n';
  os << "proxy score (mean intersection F1 over " << r.sweep.curve.size()
     << " thresholds): " << num(r.sweep.proxy) << '\n';
  os << SweepResult::disclaimer() << '\n';
  return os.str();
}

std::string class_csv(const EvalReport& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "class,tp,fp,fn,precision,recall,f1\n";
  for (std::size_t c = 0; c < r.collar.per_class.size(); ++c) {
    const auto& k = r.collar.per_class[c];
    os << (c < names.size() ? names[c] : "class" + std::to_string(c)) << ',' << k.tp << ',' << k.fp << ','
       << k.fn << ',' << num(ratio(k.tp, k.tp + k.fp)) << ',' << num(ratio(k.tp, k.tp + k.fn)) << ','
       << num(k.f1()) << '\n';
  }
  return os.str();
}

}  // namespace freqdyn::evalkit

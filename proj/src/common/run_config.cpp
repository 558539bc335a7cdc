// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/common/run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace freqdyn {
using crnn::ConfigError;

namespace {

template <class V>
V get(const YAML::Node& n, const std::string& where) {
  try {
    return n.as<V>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

using Handlers = std::map<std::string, std::function<void(const YAML::Node&, const std::string&)>>;

void dispatch(const YAML::Node& node, const std::string& section, const Handlers& h) {
  if (!node || node.IsNull()) return;
  if (!node.IsMap()) throw ConfigError(section + ": expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const auto it = h.find(key);
    if (it == h.end()) throw ConfigError(section + ": unknown key \"" + key + "\"");
    it->second(kv.second, section + "." + key);
  }
}

template <class V>
auto set(V& field) {
  return [&field](const YAML::Node& n, const std::string& where) { field = get<V>(n, where); };
}

void parse_data(DataConfig& d, const YAML::Node& n) {
  auto& s = d.synth;
  dispatch(n, "data",
           {{"n_strong", set(d.n_strong)},
            {"n_weak", set(d.n_weak)},
            {"n_unlabeled", set(d.n_unlabeled)},
            {"n_val", set(d.n_val)},
            {"clip_seconds", set(s.clip_seconds)},
            {"min_events", set(s.min_events)},
            {"max_events", set(s.max_events)},
            {"snr_min_db", set(s.snr_min_db)},
            {"snr_max_db", set(s.snr_max_db)},
            {"min_event_seconds", set(s.min_event_seconds)},
            {"max_event_seconds", set(s.max_event_seconds)},
            {"palette", [&s](const YAML::Node& v, const std::string& w) {
               s.palette.clear();
               for (const auto& name : get<std::vector<std::string>>(v, w)) {
                 try {
                   s.palette.push_back(static_cast<datakit::EventClass>(datakit::class_index(name)));
                 } catch (const std::exception&) {
                   throw ConfigError(w + ": unknown class \"" + name + "\"");
                 }
               }
             }}});
}

void parse_features(features::MelConfig& m, const YAML::Node& n) {
  dispatch(n, "features",
           {{"sample_rate", set(m.sample_rate)},
            {"n_fft", set(m.n_fft)},
            {"hop", set(m.hop)},
            {"n_mels", set(m.n_mels)},
            {"fmin", set(m.fmin)},
            {"fmax", set(m.fmax)}});
}

trainer::FilterMode parse_filter(const std::string& s, const std::string& where) {
  if (s == "off") return trainer::FilterMode::off;
  if (s == "step") return trainer::FilterMode::step;
  if (s == "linear") return trainer::FilterMode::linear;
  if (s == "mixed") return trainer::FilterMode::mixed;
  throw ConfigError(where + ": expected off, step, linear or mixed");
}

void parse_augment(trainer::AugmentConfig& a, const YAML::Node& n, const std::string& where) {
  if (n.IsScalar()) {
    // `augment: false` turns everything off
    if (!get<bool>(n, where)) a = trainer::AugmentConfig::none();
    return;
  }
  dispatch(n, where,
           {{"filter", [&a](const YAML::Node& v, const std::string& w) {
               a.filter = parse_filter(get<std::string>(v, w), w);
             }},
            {"filter_mixed_step_prob", set(a.filter_mixed_step_prob)},
            {"filter_bands", [&a](const YAML::Node& v, const std::string& w) {
               const auto b = get<std::vector<std::size_t>>(v, w);
               if (b.size() != 2) throw ConfigError(w + ": expected [min, max]");
               a.filter_min_bands = b[0];
               a.filter_max_bands = b[1];
             }},
            {"filter_db", set(a.filter_db)},
            {"time_mask_frames", set(a.time_mask_frames)},
            {"freq_mask_bins", set(a.freq_mask_bins)},
            {"shift_frames", set(a.shift_frames)},
            {"noise_sigma", set(a.noise_sigma)},
            {"mixup_prob", set(a.mixup_prob)},
            {"mixup_alpha", set(a.mixup_alpha)}});
}

void parse_train(trainer::TrainConfig& t, const YAML::Node& n) {
  dispatch(n, "train",
           {{"epochs", set(t.epochs)},
            {"lr", set(t.lr)},
            {"beta1", set(t.beta1)},
            {"beta2", set(t.beta2)},
            {"adam_eps", set(t.adam_eps)},
            {"ema_alpha", set(t.ema_alpha)},
            {"w_weak", set(t.loss.w_weak)},
            {"w_cons_max", set(t.loss.w_cons_max)},
            {"ramp_epochs", set(t.loss.ramp_epochs)},
            {"batch", [&t](const YAML::Node& v, const std::string& w) {
               const auto b = get<std::vector<std::size_t>>(v, w);
               if (b.size() != 3) throw ConfigError(w + ": expected [strong, weak, unlabeled]");
               t.batch_strong = b[0];
               t.batch_weak = b[1];
               t.batch_unlabeled = b[2];
             }},
            {"grad_clip", set(t.grad_clip)},
            {"val_batch", set(t.val_batch)},
            {"augment", [&t](const YAML::Node& v, const std::string& w) { parse_augment(t.augment, v, w); }}});
}

void parse_eval(evalkit::EvalConfig& e, bool& teacher, const YAML::Node& n) {
  dispatch(n, "eval",
           {{"weak_tau", set(e.weak_tau)},
            {"median_window", set(e.median_window)},
            {"threshold", set(e.threshold)},
            {"onset_collar", set(e.collar.onset_collar)},
            {"offset_ratio", set(e.collar.offset_ratio)},
            {"offset_floor", set(e.collar.offset_floor)},
            {"min_cover", set(e.min_cover)},
            {"use_teacher", set(teacher)}});
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.model = crnn::preset(c.preset);
  c.model.n_mels = c.features.n_mels;
  c.train = trainer::TrainConfig::toy();
  return c;
}

void RunConfig::validate() const {
  try {
    features.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("features: ") + e.what());
  }
  if (model.n_mels != features.n_mels) {
    throw ConfigError("model.n_mels (" + std::to_string(model.n_mels) + ") must equal features.n_mels (" +
                      std::to_string(features.n_mels) + ")");
  }
  if (model.n_classes != datakit::kNumClasses) {
    throw ConfigError("model.n_classes must be " + std::to_string(datakit::kNumClasses) +
                      " for the synthetic palette");
  }
  model.validate();
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto& s = data.synth;
  if (s.palette.empty()) throw ConfigError("data.palette must not be empty");
  if (s.min_events < 1 || s.max_events < s.min_events) throw ConfigError("data: need 1 <= min_events <= max_events");
  if (!(s.clip_seconds > 0)) throw ConfigError("data.clip_seconds must be > 0");
  if (!(s.min_event_seconds > 0 && s.max_event_seconds >= s.min_event_seconds &&
        s.max_event_seconds <= s.clip_seconds)) {
    throw ConfigError("data: need 0 < min_event_seconds <= max_event_seconds <= clip_seconds");
  }
  if (s.snr_max_db < s.snr_min_db) throw ConfigError("data: snr_max_db < snr_min_db");
  if (s.sample_rate != features.sample_rate) throw ConfigError("data and features sample rates differ");
  if (eval.median_window % 2 == 0) throw ConfigError("eval.median_window must be odd");
  if (!(eval.threshold > 0 && eval.threshold < 1)) throw ConfigError("eval.threshold must lie in (0,1)");
}

RunConfig parse_run_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c = RunConfig::defaults();
  c.source = text;
  if (!root || root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError("config: expected a mapping of sections");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key != "data" && key != "features" && key != "model" && key != "train" && key != "eval") {
      throw ConfigError("config: unknown section \"" + key + "\"");
    }
  }
  parse_data(c.data, root["data"]);
  parse_features(c.features, root["features"]);
  c.data.synth.sample_rate = static_cast<int>(c.features.sample_rate);
  const YAML::Node m = root["model"];
  if (m && m.IsMap() && m["preset"]) c.preset = get<std::string>(m["preset"], "model.preset");
  try {
    c.model = crnn::preset(c.preset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model.preset: ") + e.what());
  }
  c.model.n_mels = c.features.n_mels;
  crnn::apply_yaml(c.model, m);
  if (c.preset.rfind("toy-", 0) != 0) c.train = trainer::TrainConfig{};
  parse_train(c.train, root["train"]);
  parse_eval(c.eval, c.eval_teacher, root["eval"]);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::ios_base::failure("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

RunConfig with_preset(const RunConfig& cfg, const std::string& preset) {
  YAML::Node root = cfg.source.empty() ? YAML::Node(YAML::NodeType::Map) : YAML::Load(cfg.source);
  if (!root.IsMap()) root = YAML::Node(YAML::NodeType::Map);
  YAML::Node m = root["model"];
  if (!m || !m.IsMap()) {
    root["model"] = YAML::Node(YAML::NodeType::Map);
    m = root["model"];
  }
  m.remove("variant");
  m["preset"] = preset;
  YAML::Emitter e;
  e << root;
  RunConfig out = parse_run_config(e.c_str());
  out.source = cfg.source;
  return out;
}

void echo_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::ios_base::failure("cannot write " + path.string());
  if (!cfg.source.empty()) {
    os << cfg.source;
  } else {
    os << "model:\n  preset: " << cfg.preset << '\n';
  }
  if (!os) throw std::ios_base::failure("write failed: " + path.string());
}

}  // namespace freqdyn

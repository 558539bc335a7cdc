// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/crnn/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <set>
#include <sstream>

namespace freqdyn::crnn {
namespace {

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

nn::Fraction sub(nn::Fraction a, nn::Fraction b) {
  return {a.num * b.den - b.num * a.den, a.den * b.den};
}
nn::Fraction mul(nn::Fraction a, long n) { return {a.num * n, a.den}; }

std::vector<ops::FreqTime> ones(std::size_t K) { return std::vector<ops::FreqTime>(K, {1, 1}); }

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::plain: return "plain";
    case Variant::fdy: return "fdy";
    case Variant::dfd: return "dfd";
    case Variant::pfd: return "pfd";
    case Variant::mdfd: return "mdfd";
    case Variant::tfd: return "tfd";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::plain, Variant::fdy, Variant::dfd, Variant::pfd, Variant::mdfd, Variant::tfd}) {
    if (to_string(v) == s) return v;
  }
  if (s == "baseline") return Variant::plain;
  throw ConfigError("unknown variant \"" + s + "\" (expected plain|fdy|dfd|pfd|mdfd|tfd)");
}

std::size_t ModelConfig::out_channels(std::size_t layer) const {
  return nn::fraction_of(channels.at(layer - 1), channel_multiple, "layer " + std::to_string(layer) + " width");
}

std::size_t ModelConfig::input_freq(std::size_t layer) const {
  std::size_t f = n_mels;
  for (std::size_t l = 1; l < layer; ++l) f /= pools.at(l - 1).freq;
  return f;
}

std::size_t ModelConfig::freq_out() const { return input_freq(layers() + 1); }

std::size_t ModelConfig::time_pool() const {
  std::size_t p = 1;
  for (const auto& w : pools) p *= w.time;
  return p;
}

bool ModelConfig::is_dynamic_layer(std::size_t layer) const {
  if (variant == Variant::plain) return false;
  if (!dynamic_layers.empty()) return contains(dynamic_layers, layer);
  return layer >= (pre_conv ? 1u : 2u) && layer <= layers();
}

bool ModelConfig::is_dilation_layer(std::size_t layer) const {
  if (!is_dynamic_layer(layer)) return false;
  if (!dilation_layers.empty()) return contains(dilation_layers, layer);
  return input_freq(layer) > 2;
}

std::vector<nn::BranchSpec> ModelConfig::branches(std::size_t layer) const {
  nn::BranchSpec stat;
  stat.kind = nn::BranchKind::static_conv;
  stat.fraction = channel_multiple;
  if (!is_dynamic_layer(layer)) return {stat};

  nn::BranchSpec dyn;
  dyn.kind = nn::BranchKind::dynamic;
  dyn.attention = attention;
  dyn.attention.K = K;
  dyn.dilations = ones(K);
  const bool dil = is_dilation_layer(layer);
  switch (variant) {
    case Variant::plain:
      return {stat};
    case Variant::tfd:
      dyn.attention.pooling = nn::TimePooling::tap;
      [[fallthrough]];
    case Variant::fdy:
      dyn.fraction = channel_multiple;
      return {dyn};
    case Variant::dfd:
      dyn.fraction = channel_multiple;
      if (dil) dyn.dilations = dilations;
      return {dyn};
    case Variant::pfd: {
      if (fraction.num == 0) return {stat};
      dyn.fraction = fraction;
      stat.fraction = sub(channel_multiple, fraction);
      return {dyn, stat};
    }
    case Variant::mdfd: {
      std::vector<nn::BranchSpec> out;
      for (const auto& set : branch_dilations) {
        nn::BranchSpec b = dyn;
        b.fraction = branch_fraction;
        if (dil) {
          const std::size_t pad = K - std::min(K, set.size());
          for (std::size_t i = 0; i < set.size() && pad + i < K; ++i) b.dilations[pad + i] = {set[i], 1};
        }
        out.push_back(b);
      }
      stat.fraction = sub(channel_multiple, mul(branch_fraction, static_cast<long>(branch_dilations.size())));
      out.push_back(stat);
      return out;
    }
  }
  return {stat};
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (channels.empty()) fail("channels must not be empty");
  if (pools.size() != channels.size()) fail("pools must list one (freq, time) window per conv layer");
  if (n_mels == 0) fail("n_mels must be positive");
  std::size_t fp = 1;
  for (const auto& p : pools) {
    if (p.freq == 0 || p.time == 0) fail("pool windows must be >= 1");
    fp *= p.freq;
  }
  if (n_mels % fp != 0) fail("the product of frequency pools must divide n_mels");
  if (!(dropout >= 0 && dropout < 1)) fail("dropout must be in [0, 1)");
  if (K < 1) fail("K must be >= 1");
  if (!(attention.temperature > 0)) fail("temperature must be positive");
  if (gru_hidden == 0 || gru_layers == 0 || n_classes == 0) fail("gru_hidden, gru_layers and n_classes must be >= 1");
  if (pre_conv && pre_conv_channels == 0) fail("pre_conv_channels must be >= 1");
  if (variant == Variant::tfd && !attention.tap.any() ) fail("tfd needs at least one of ta, va, ap");

  for (std::size_t l : dynamic_layers) {
    if (l < 1 || l > layers()) fail("dynamic layer " + std::to_string(l) + " out of range");
  }
  for (std::size_t l : dilation_layers) {
    if (l < 1 || l > layers()) fail("dilation layer " + std::to_string(l) + " out of range");
  }
  if (is_dynamic_layer(1) && !pre_conv) {
    fail("layer 1 must stay a plain convolution unless pre_conv is enabled (a single input channel gives no frequency attention)");
  }
  if (variant == Variant::dfd && dilations.size() != K) fail("dfd needs exactly K dilations");
  for (const auto& d : dilations) {
    if (d.freq < 1 || d.time < 1) fail("dilations must be >= 1");
  }
  if (variant == Variant::mdfd) {
    if (branch_dilations.empty()) fail("mdfd needs at least one dynamic branch");
    for (const auto& set : branch_dilations) {
      if (set.empty() || set.size() > K) fail("each mdfd branch lists 1..K dilations");
      for (std::size_t d : set) {
        if (d < 1) fail("mdfd dilations must be >= 1");
      }
    }
    const nn::Fraction rest = sub(channel_multiple, mul(branch_fraction, static_cast<long>(branch_dilations.size())));
    if (rest.num < 0) fail("mdfd branch channels exceed the layer width");
  }
  if (variant == Variant::pfd && sub(channel_multiple, fraction).num < 0) {
    fail("pfd fraction exceeds the channel multiple");
  }
  for (std::size_t l = 1; l <= layers(); ++l) {
    bool dilated = false;
    try {
      out_channels(l);
      for (const auto& b : branches(l)) {
        if (b.kind == nn::BranchKind::dynamic) {
          nn::fraction_of(channels[l - 1], b.fraction, "layer " + std::to_string(l));
          dilated = dilated || b.dilated();
        } else {
          nn::fraction_of(channels[l - 1], b.fraction, "layer " + std::to_string(l));
        }
      }
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    if (dilated && input_freq(l) <= 2) {
      fail("dilated kernels are not allowed at layer " + std::to_string(l) +
           ": its input has only " + std::to_string(input_freq(l)) + " frequency bins");
    }
  }
}

void make_toy(ModelConfig& cfg) {
  cfg.channels = {16, 32, 64, 64};
  cfg.pools = {{4, 2}, {4, 2}, {2, 1}, {2, 1}};
  cfg.gru_hidden = 64;
  cfg.gru_layers = 2;
  cfg.n_classes = 5;
  cfg.dynamic_layers.clear();
  cfg.dilation_layers.clear();
}

ModelConfig preset(const std::string& full_name) {
  const bool toy = full_name.rfind("toy-", 0) == 0;
  const std::string name = toy ? full_name.substr(4) : full_name;
  ModelConfig c;
  if (name == "baseline" || name == "plain") {
    c.variant = Variant::plain;
  } else if (name == "fdy") {
    c.variant = Variant::fdy;
  } else if (name == "dfd") {
    c.variant = Variant::dfd;
    c.dilations = {{1, 1}, {2, 1}, {3, 1}, {3, 1}};
  } else if (name == "pfd") {
    c.variant = Variant::pfd;
    c.fraction = {1, 8};
  } else if (name == "tfd") {
    c.variant = Variant::tfd;
    c.attention.pooling = nn::TimePooling::tap;
  } else if (name == "mdfd") {
    c.variant = Variant::mdfd;
    c.channel_multiple = {11, 8};
    c.branch_fraction = {1, 8};
    c.branch_dilations = {{1}, {1}, {1}, {1}, {1}, {2, 3}, {2, 2, 3}, {2, 3, 3}};
    c.pre_conv = true;
  } else {
    throw ConfigError("unknown preset \"" + full_name + "\"");
  }
  if (toy) make_toy(c);
  return c;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const char* n : {"baseline", "fdy", "dfd", "pfd", "tfd", "mdfd"}) {
    out.push_back(n);
    out.push_back(std::string("toy-") + n);
  }
  return out;
}

// ---- YAML ----------------------------------------------------------------

namespace {

template <class V>
V get(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<V>();
  } catch (const YAML::Exception& e) {
    throw ConfigError("model." + key + ": " + e.what());
  }
}

nn::Fraction get_fraction(const YAML::Node& n, const std::string& key) {
  try {
    return nn::Fraction::parse(get<std::string>(n, key));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model." + key + ": " + e.what());
  }
}

// [time, freq] pairs, matching the (d_t, d_f) dilation notation.
std::vector<ops::FreqTime> get_dilations(const YAML::Node& n) {
  std::vector<ops::FreqTime> out;
  for (const auto& p : get<std::vector<std::vector<std::size_t>>>(n, "dilations")) {
    if (p.size() != 2) throw ConfigError("model.dilations: each entry is [time, freq]");
    out.push_back({p[1], p[0]});
  }
  return out;
}

// [freq, time] pairs, the tensor axis order.
std::vector<ops::FreqTime> get_pools(const YAML::Node& n) {
  std::vector<ops::FreqTime> out;
  for (const auto& p : get<std::vector<std::vector<std::size_t>>>(n, "pools")) {
    if (p.size() != 2) throw ConfigError("model.pools: each entry is [freq, time]");
    out.push_back({p[0], p[1]});
  }
  return out;
}

}  // namespace

void apply_yaml(ModelConfig& c, const YAML::Node& node) {
  if (!node || node.IsNull()) return;
  if (!node.IsMap()) throw ConfigError("model: expected a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    const YAML::Node& v = kv.second;
    if (key == "preset") {
      continue;  // resolved by the caller before overrides
    } else if (key == "n_mels") {
      c.n_mels = get<std::size_t>(v, key);
    } else if (key == "channels") {
      c.channels = get<std::vector<std::size_t>>(v, key);
    } else if (key == "channel_multiple") {
      c.channel_multiple = get_fraction(v, key);
    } else if (key == "pools") {
      c.pools = get_pools(v);
    } else if (key == "activation") {
      const auto s = get<std::string>(v, key);
      if (s == "relu") c.activation = Activation::relu;
      else if (s == "cg") c.activation = Activation::cg;
      else throw ConfigError("model.activation: expected relu or cg");
    } else if (key == "dropout") {
      c.dropout = get<double>(v, key);
    } else if (key == "variant") {
      c.variant = parse_variant(get<std::string>(v, key));
      if (c.variant == Variant::tfd) c.attention.pooling = nn::TimePooling::tap;
    } else if (key == "dynamic_layers") {
      c.dynamic_layers = get<std::vector<std::size_t>>(v, key);
    } else if (key == "K") {
      c.K = get<std::size_t>(v, key);
    } else if (key == "temperature") {
      c.attention.temperature = get<double>(v, key);
    } else if (key == "squeeze_ratio") {
      c.attention.squeeze_ratio = get<std::size_t>(v, key);
    } else if (key == "squeeze_kernel") {
      c.attention.squeeze_kernel = get<std::size_t>(v, key);
    } else if (key == "pooling") {
      const auto s = get<std::string>(v, key);
      if (s == "avg") c.attention.pooling = nn::TimePooling::avg;
      else if (s == "tap") c.attention.pooling = nn::TimePooling::tap;
      else throw ConfigError("model.pooling: expected avg or tap");
    } else if (key == "tap_terms") {
      nn::TapTerms t{false, false, false};
      for (const auto& s : get<std::vector<std::string>>(v, key)) {
        if (s == "ta") t.ta = true;
        else if (s == "va") t.va = true;
        else if (s == "ap") t.ap = true;
        else throw ConfigError("model.tap_terms: unknown term \"" + s + "\"");
      }
      c.attention.tap = t;
    } else if (key == "dilations") {
      c.dilations = get_dilations(v);
    } else if (key == "dilation_layers") {
      c.dilation_layers = get<std::vector<std::size_t>>(v, key);
    } else if (key == "fraction") {
      c.fraction = get_fraction(v, key);
    } else if (key == "branch_dilations") {
      c.branch_dilations = get<std::vector<std::vector<std::size_t>>>(v, key);
    } else if (key == "branch_fraction") {
      c.branch_fraction = get_fraction(v, key);
    } else if (key == "pre_conv") {
      c.pre_conv = get<bool>(v, key);
    } else if (key == "pre_conv_channels") {
      c.pre_conv_channels = get<std::size_t>(v, key);
    } else if (key == "gru_hidden") {
      c.gru_hidden = get<std::size_t>(v, key);
    } else if (key == "gru_layers") {
      c.gru_layers = get<std::size_t>(v, key);
    } else if (key == "n_classes") {
      c.n_classes = get<std::size_t>(v, key);
    } else {
      throw ConfigError("model: unknown key \"" + key + "\"");
    }
  }
}

std::string to_yaml(const ModelConfig& c) {
  YAML::Emitter e;
  auto pairs = [&](const std::vector<ops::FreqTime>& v, bool time_first) {
    e << YAML::Flow << YAML::BeginSeq;
    for (const auto& p : v) {
      e << YAML::Flow << YAML::BeginSeq;
      if (time_first) e << p.time << p.freq;
      else e << p.freq << p.time;
      e << YAML::EndSeq;
    }
    e << YAML::EndSeq;
  };
  e << YAML::BeginMap;
  e << YAML::Key << "n_mels" << YAML::Value << c.n_mels;
  e << YAML::Key << "channels" << YAML::Value << YAML::Flow << c.channels;
  e << YAML::Key << "channel_multiple" << YAML::Value << c.channel_multiple.str();
  e << YAML::Key << "pools" << YAML::Value;
  pairs(c.pools, false);
  e << YAML::Key << "activation" << YAML::Value << (c.activation == Activation::cg ? "cg" : "relu");
  e << YAML::Key << "dropout" << YAML::Value << c.dropout;
  e << YAML::Key << "variant" << YAML::Value << to_string(c.variant);
  e << YAML::Key << "dynamic_layers" << YAML::Value << YAML::Flow << c.dynamic_layers;
  e << YAML::Key << "K" << YAML::Value << c.K;
  e << YAML::Key << "temperature" << YAML::Value << c.attention.temperature;
  e << YAML::Key << "squeeze_ratio" << YAML::Value << c.attention.squeeze_ratio;
  e << YAML::Key << "squeeze_kernel" << YAML::Value << c.attention.squeeze_kernel;
  e << YAML::Key << "pooling" << YAML::Value << (c.attention.pooling == nn::TimePooling::tap ? "tap" : "avg");
  std::vector<std::string> terms;
  if (c.attention.tap.ta) terms.push_back("ta");
  if (c.attention.tap.va) terms.push_back("va");
  if (c.attention.tap.ap) terms.push_back("ap");
  e << YAML::Key << "tap_terms" << YAML::Value << YAML::Flow << terms;
  e << YAML::Key << "dilations" << YAML::Value;
  pairs(c.dilations, true);
  e << YAML::Key << "dilation_layers" << YAML::Value << YAML::Flow << c.dilation_layers;
  e << YAML::Key << "fraction" << YAML::Value << c.fraction.str();
  e << YAML::Key << "branch_dilations" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& s : c.branch_dilations) e << YAML::Flow << s;
  e << YAML::EndSeq;
  e << YAML::Key << "branch_fraction" << YAML::Value << c.branch_fraction.str();
  e << YAML::Key << "pre_conv" << YAML::Value << c.pre_conv;
  e << YAML::Key << "pre_conv_channels" << YAML::Value << c.pre_conv_channels;
  e << YAML::Key << "gru_hidden" << YAML::Value << c.gru_hidden;
  e << YAML::Key << "gru_layers" << YAML::Value << c.gru_layers;
  e << YAML::Key << "n_classes" << YAML::Value << c.n_classes;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace freqdyn::crnn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqdyn/dynconv/dynconv.hpp"

namespace YAML {
class Node;
}

namespace freqdyn::crnn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant { plain, fdy, dfd, pfd, mdfd, tfd };
enum class Activation { relu, cg };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Layer-by-layer CRNN description. Layers are numbered from 1.
struct ModelConfig {
  std::size_t n_mels = 128;
  std::vector<std::size_t> channels{32, 64, 128, 256, 256, 256, 256};
  /// Output channels are channels[l] * channel_multiple.
  nn::Fraction channel_multiple{1, 1};
  std::vector<ops::FreqTime> pools{{2, 2}, {2, 2}, {2, 1}, {2, 1}, {2, 1}, {2, 1}, {2, 1}};
  Activation activation = Activation::cg;
  double dropout = 0.2;

  Variant variant = Variant::plain;
  /// Layers that use the dynamic variant; empty means 2..L (1..L with pre-conv).
  std::vector<std::size_t> dynamic_layers;
  std::size_t K = 4;
  nn::AttentionSpec attention;  // K is taken from the field above

  /// dfd: per-kernel dilations (size K).
  std::vector<ops::FreqTime> dilations;
  /// Layers where dilations apply; empty means every dynamic layer whose input
  /// has more than two frequency bins.
  std::vector<std::size_t> dilation_layers;
  /// pfd: share of the base width given to the dynamic branch.
  nn::Fraction fraction{1, 8};
  /// mdfd: frequency dilations of each dynamic branch, left-padded with 1 to K.
  std::vector<std::vector<std::size_t>> branch_dilations;
  nn::Fraction branch_fraction{1, 8};

  bool pre_conv = false;
  std::size_t pre_conv_channels = 16;

  std::size_t gru_hidden = 256;
  std::size_t gru_layers = 2;
  std::size_t n_classes = 10;

  std::size_t layers() const { return channels.size(); }
  std::size_t out_channels(std::size_t layer) const;
  /// Frequency bins entering layer l.
  std::size_t input_freq(std::size_t layer) const;
  std::size_t freq_out() const;
  std::size_t time_pool() const;
  bool is_dynamic_layer(std::size_t layer) const;
  bool is_dilation_layer(std::size_t layer) const;

  /// Branches for layer l after every default is resolved.
  std::vector<nn::BranchSpec> branches(std::size_t layer) const;

  /// Throws ConfigError naming the violated rule.
  void validate() const;
};

/// Named configurations: baseline, fdy, dfd, pfd, tfd, mdfd, and the same
/// names with a "toy-" prefix for the desk-scale network.
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Shrinks a full-size configuration to the toy network, keeping the variant.
void make_toy(ModelConfig& cfg);

/// Overrides fields present in `node`; unknown keys raise ConfigError.
void apply_yaml(ModelConfig& cfg, const YAML::Node& node);
std::string to_yaml(const ModelConfig& cfg);

}  // namespace freqdyn::crnn

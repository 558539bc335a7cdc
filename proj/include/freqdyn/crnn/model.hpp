// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "freqdyn/crnn/config.hpp"
#include "freqdyn/dynconv/context.hpp"
#include "freqdyn/dynconv/dynconv.hpp"

namespace freqdyn::crnn {

template <class T>
struct Predictions {
  Tensor<T> strong;  // B x T' x n_classes
  Tensor<T> weak;    // B x n_classes
};

/// Handles of one forward pass on a tape.
struct Outputs {
  Var strong;  // B x T' x n_classes, probabilities
  Var weak;    // B x n_classes, probabilities
};

/// Convolutional blocks (conv, BN, activation, dropout, max-pool), a stacked
/// bidirectional GRU, a per-frame strong head, and a weak head that pools the
/// strong probabilities with class-wise softmax attention over time.
template <class T>
class Model {
 public:
  static Model build(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return store_; }
  const ParamStore<T>& params() const noexcept { return store_; }

  /// Exact trainable scalar count.
  std::size_t count_params() const { return store_.scalar_count(); }

  /// mel is B x 1 x n_mels x T with T divisible by the total time pooling.
  Outputs forward(const nn::Context<T>& ctx, Var mel) const;

  /// Inference in eval mode on plain tensors.
  Predictions<T> predict(const Tensor<T>& mel, nn::AttentionRecorder<T>* recorder = nullptr);

  const std::vector<nn::ConvLayer>& conv_layers() const noexcept { return layers_; }

 private:
  struct GruWeights {
    std::size_t w_ih, w_hh, b_ih, b_hh;
  };

  ModelConfig cfg_;
  ParamStore<T> store_;
  std::optional<nn::Conv> pre_conv_;
  std::optional<nn::BatchNorm> pre_bn_;
  std::vector<nn::ConvLayer> layers_;
  std::vector<nn::BatchNorm> bns_;
  std::vector<std::optional<nn::Conv>> gates_;  // context gating
  std::vector<std::pair<GruWeights, GruWeights>> gru_;
  std::size_t strong_w_ = 0, strong_b_ = 0, att_w_ = 0, att_b_ = 0;
};

/// Largest multiple of `pool` not exceeding T frames, e.g. 626 -> 624 for 4.
std::size_t usable_frames(std::size_t frames, std::size_t pool);

/// Crops the time axis of B x 1 x F x T (or F x T) to usable_frames.
template <class T>
Tensor<T> truncate_frames(const Tensor<T>& mel, std::size_t pool);

}  // namespace freqdyn::crnn

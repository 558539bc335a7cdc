// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>

#include "freqdyn/dynconv/context.hpp"

namespace freqdyn::nn {

enum class TimePooling { avg, tap };

/// Terms of temporal attention pooling: time attention, velocity attention,
/// plain average.
struct TapTerms {
  bool ta = true;
  bool va = true;
  bool ap = true;
  bool any() const { return ta || va || ap; }
  friend bool operator==(const TapTerms&, const TapTerms&) = default;
};

struct AttentionSpec {
  std::size_t K = 4;
  TimePooling pooling = TimePooling::avg;
  TapTerms tap;
  double temperature = 1.0;
  std::size_t squeeze_ratio = 4;
  /// Frequency extent of the squeeze conv (kernel is squeeze_kernel x 1).
  std::size_t squeeze_kernel = 3;
};

/// Width of the squeeze layer: max(C / ratio, K).
std::size_t attention_hidden(std::size_t channels, const AttentionSpec& spec);

/// Temporal attention pooling. Collapses B x C x F x T to B x C x F x 1 as a
/// weighted combination of frames, with weights from softmax over time.
struct TapPool {
  struct Path {
    Conv conv1;  // C -> C, 3 x 1 along frequency
    BatchNorm bn;
    Conv conv2;  // C -> C, 1 x 1
  };
  std::optional<Path> ta, va;
  bool ap = true;

  template <class T>
  static TapPool create(ParamStore<T>& store, const std::string& name, std::size_t channels,
                        TapTerms terms, std::mt19937_64& rng);

  template <class T>
  Var forward(const Context<T>& ctx, Var x) const;
};

/// Frequency-wise attention over K basis kernels: B x C x F x T -> B x K x F x 1,
/// a softmax over K at every (batch, frequency).
struct FreqAttention {
  AttentionSpec spec;
  std::optional<TapPool> tap;
  Conv squeeze;  // no bias; followed by BN and ReLU
  BatchNorm bn;
  Conv excite;  // 1 x 1 to K with bias

  template <class T>
  static FreqAttention create(ParamStore<T>& store, const std::string& name, std::size_t channels,
                              const AttentionSpec& spec, std::mt19937_64& rng);

  /// Time-pooled descriptor B x C x F x 1.
  template <class T>
  Var pool(const Context<T>& ctx, Var x) const;

  template <class T>
  Var forward(const Context<T>& ctx, Var x) const;
};

}  // namespace freqdyn::nn

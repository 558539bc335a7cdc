// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "freqdyn/numerics/params.hpp"
#include "freqdyn/numerics/tape.hpp"

namespace freqdyn::nn {

/// Attention weights captured during a forward pass.
template <class T>
struct AttentionRecorder {
  struct Entry {
    std::size_t layer = 0;   // 1-based conv layer index
    std::size_t branch = 0;  // dynamic branch index within the layer
    Tensor<T> pi;            // B x K x F x 1
    Tensor<T> input;         // layer input, kept when capture_inputs is set
  };
  bool capture_inputs = false;
  std::vector<Entry> entries;
};

/// Everything a layer needs during one forward pass.
template <class T>
struct Context {
  Tape<T>& tape;
  std::span<const Var> vars;  // parameters bound to `tape`, store order
  ParamStore<T>& store;
  bool train = false;
  std::mt19937_64* rng = nullptr;  // dropout; required when train is set
  AttentionRecorder<T>* recorder = nullptr;

  Var param(std::size_t i) const { return vars[i]; }
};

/// conv2d with optional bias, weights held in a ParamStore.
struct Conv {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  ops::Conv2dOptions options;

  template <class T>
  static Conv create(ParamStore<T>& store, const std::string& name, std::size_t cin,
                     std::size_t cout, ops::FreqTime kernel, bool with_bias,
                     std::mt19937_64& rng, ops::Conv2dOptions opt = {}) {
    Conv c;
    c.weight = store.add(name + ".weight",
                         he_uniform<T>({cout, cin, kernel.freq, kernel.time},
                                       cin * kernel.freq * kernel.time, rng));
    if (with_bias) c.bias = store.add(name + ".bias", Tensor<T>({cout}));
    c.options = opt;
    return c;
  }

  template <class T>
  Var forward(const Context<T>& ctx, Var x) const {
    std::optional<Var> b;
    if (bias) b = ctx.param(*bias);
    return ops::conv2d(ctx.tape, x, ctx.param(weight), b, options);
  }
};

struct BatchNorm {
  std::size_t gamma = 0, beta = 0, state = 0;

  template <class T>
  static BatchNorm create(ParamStore<T>& store, const std::string& name, std::size_t channels) {
    BatchNorm bn;
    bn.gamma = store.add(name + ".gamma", Tensor<T>({channels}, T{1}));
    bn.beta = store.add(name + ".beta", Tensor<T>({channels}, T{0}));
    bn.state = store.add_batch_norm_state(name, channels);
    return bn;
  }

  template <class T>
  Var forward(const Context<T>& ctx, Var x) const {
    return ops::batch_norm(ctx.tape, x, ctx.param(gamma), ctx.param(beta),
                           ctx.store.bn_state(state), ctx.train);
  }
};

}  // namespace freqdyn::nn

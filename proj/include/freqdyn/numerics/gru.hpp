// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "freqdyn/numerics/tape.hpp"

namespace freqdyn::ops {

/// Weights of one GRU direction. Gate rows are stacked (reset, update, new):
/// w_ih is 3H x D, w_hh is 3H x H, b_ih and b_hh are 3H.
struct GruDirection {
  Var w_ih, w_hh, b_ih, b_hh;
};

/// Runs one GRU direction over B x T x D from a zero initial state and
/// returns B x T x H. With `reverse` the sequence is consumed from t = T-1
/// and outputs stay aligned with their input frames.
///
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
template <class T>
Var gru(Tape<T>& tape, Var x, const GruDirection& w, bool reverse);

/// Stacked bidirectional GRU; `layers[l]` holds {forward, backward}. Output
/// is B x T x 2H with the forward half first.
template <class T>
Var bigru(Tape<T>& tape, Var x,
          const std::vector<std::pair<GruDirection, GruDirection>>& layers);

}  // namespace freqdyn::ops

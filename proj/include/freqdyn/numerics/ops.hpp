// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include "freqdyn/numerics/tape.hpp"
#include "freqdyn/numerics/tensor.hpp"

// Differentiable primitives. Every function records one node on the tape and
// returns its handle; tensors are never mutated after an op writes them.
namespace freqdyn::ops {

/// Frequency/time pair, ordered as the B x C x F x T layout.
struct FreqTime {
  std::size_t freq = 1;
  std::size_t time = 1;
  friend bool operator==(const FreqTime&, const FreqTime&) = default;
};

struct Conv2dOptions {
  FreqTime dilation{1, 1};
  /// Zero "same" padding, (k-1)*d/2 on each side. Requires odd kernels.
  bool same = true;
  /// Used when `same` is false.
  FreqTime padding{0, 0};
};

// ---- raw kernels (no tape) -------------------------------------------------

/// Cross-correlation of B x Cin x F x T with Cout x Cin x kF x kT, stride 1.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const std::type_identity_t<Tensor<T>>* bias,
                         const Conv2dOptions& opt);

/// Output extents (F', T') of conv2d for the given geometry; throws when the
/// dilated kernel does not fit the padded input.
FreqTime conv2d_output_extent(const Shape& x, const Shape& w,
                              const Conv2dOptions& opt);

// ---- differentiable ops ----------------------------------------------------

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> bias,
           const Conv2dOptions& opt = {});

enum class PoolMode { max, avg };

/// Non-overlapping pooling over the last two axes of a rank-4 tensor.
template <class T>
Var pool2d(Tape<T>& tape, Var x, PoolMode mode, FreqTime window);

template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization of a B x C x ... tensor over every axis but 1.
/// In training mode the running statistics are updated (unbiased variance).
template <class T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta,
               BatchNormState<T>& state, bool train,
               double momentum = kBatchNormMomentum,
               double eps = kBatchNormEps);

template <class T>
Var relu(Tape<T>& tape, Var x);
template <class T>
Var sigmoid(Tape<T>& tape, Var x);
template <class T>
Var tanh(Tape<T>& tape, Var x);

/// Max-subtracted softmax along `axis`.
template <class T>
Var softmax(Tape<T>& tape, Var x, std::size_t axis);

template <class T>
Var add(Tape<T>& tape, Var a, Var b);
template <class T>
Var sub(Tape<T>& tape, Var a, Var b);
template <class T>
Var mul(Tape<T>& tape, Var a, Var b);
template <class T>
Var scale(Tape<T>& tape, Var a, T s);

/// Multiplies `a` by `b`, where `b` has the same rank and extent 1 on every
/// axis it is broadcast along.
template <class T>
Var mul_broadcast(Tape<T>& tape, Var a, Var b);

template <class T>
Var sum_axis(Tape<T>& tape, Var x, std::size_t axis);
template <class T>
Var mean_axis(Tape<T>& tape, Var x, std::size_t axis);
template <class T>
Var sum_all(Tape<T>& tape, Var x);
template <class T>
Var mean_all(Tape<T>& tape, Var x);

template <class T>
Var reshape(Tape<T>& tape, Var x, Shape shape);
template <class T>
Var permute(Tape<T>& tape, Var x, std::vector<std::size_t> perm);
template <class T>
Var concat(Tape<T>& tape, std::span<const Var> xs, std::size_t axis);
template <class T>
Var slice(Tape<T>& tape, Var x, std::size_t axis, std::size_t begin,
          std::size_t end);

/// y = x W^T + b over the last axis; W is O x D.
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> bias);

/// Inverted dropout; identity when `train` is false or p == 0.
template <class T>
Var dropout(Tape<T>& tape, Var x, double p, bool train, std::mt19937_64& rng);

/// x_t - x_{t-1} along the last axis, with the first difference set to zero.
template <class T>
Var time_diff(Tape<T>& tape, Var x);

/// Value copy that blocks gradient flow.
template <class T>
Var stop_gradient(Tape<T>& tape, Var x);

/// Accumulates `g` into the gradient of `id` when that node wants one.
template <class T>
void accumulate(Tape<T>& tape, std::size_t id, const Tensor<T>& g);

}  // namespace freqdyn::ops

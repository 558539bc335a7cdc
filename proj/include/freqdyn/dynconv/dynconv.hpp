// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "freqdyn/dynconv/attention.hpp"
#include "freqdyn/dynconv/context.hpp"

namespace freqdyn::nn {

/// Non-negative rational, e.g. "1/8" or "11/8".
struct Fraction {
  long num = 1;
  long den = 1;

  static Fraction parse(const std::string& text);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  friend bool operator==(const Fraction& a, const Fraction& b) { return a.num * b.den == b.num * a.den; }
};

/// Channels of `base` covered by `f`; throws unless integral.
std::size_t fraction_of(std::size_t base, Fraction f, const std::string& what);

enum class BranchKind { static_conv, dynamic };

/// One convolution branch of a layer. Dynamic branches mix K = dilations.size()
/// basis kernels with frequency-wise attention.
struct BranchSpec {
  BranchKind kind = BranchKind::dynamic;
  Fraction fraction{1, 1};
  std::vector<ops::FreqTime> dilations{{1, 1}, {1, 1}, {1, 1}, {1, 1}};
  AttentionSpec attention;
  bool bias = false;  // per-kernel biases of a dynamic branch

  std::size_t K() const { return dilations.size(); }
  bool dilated() const;
};

// ---- functional forms ------------------------------------------------------

/// y[b,c,f,t] = sum_k pi[b,k,f,0] * ys[k][b,c,f,t].
template <class T>
Var basis_mix(Tape<T>& tape, std::span<const Var> ys, Var pi);

/// Efficient dynamic convolution: y_i = W_i * x + b_i with per-kernel
/// dilation, then y = sum_i pi_i(f) y_i. Kernels sharing a dilation run as one
/// convolution. `biases` is empty or has one entry per kernel.
template <class T>
Var dynamic_conv(Tape<T>& tape, Var x, std::span<const Var> kernels,
                 std::span<const Var> biases, std::span<const ops::FreqTime> dilations,
                 Var pi);

template <class T>
struct BasisKernelSet {
  std::vector<Tensor<T>> weights;  // K x (Cout x Cin x 3 x 3)
  std::vector<Tensor<T>> biases;   // empty or K x (Cout)
  std::vector<ops::FreqTime> dilations;
};

enum class FdyMode { naive, efficient };

/// Frequency dynamic convolution on plain tensors. naive builds the
/// per-output-frequency kernel sum_i pi_i(f) W_i and convolves with it;
/// efficient weights the per-kernel outputs. Requires all dilations 1.
template <class T>
Tensor<T> fdy_forward(const Tensor<T>& x, const BasisKernelSet<T>& kernels,
                      const Tensor<T>& pi, FdyMode mode);

/// Dilated variant; the same code path as fdy_forward(efficient).
template <class T>
Tensor<T> dfd_forward(const Tensor<T>& x, const BasisKernelSet<T>& kernels,
                      const Tensor<T>& pi);

// ---- layers ----------------------------------------------------------------

struct DynamicBranch {
  BranchSpec spec;
  std::size_t out_channels = 0;
  std::vector<std::size_t> kernels;
  std::vector<std::size_t> biases;
  FreqAttention attention;

  template <class T>
  static DynamicBranch create(ParamStore<T>& store, const std::string& name, std::size_t cin,
                              std::size_t cout, const BranchSpec& spec, std::mt19937_64& rng);

  /// Returns the output and, through `pi_out`, the attention weights.
  template <class T>
  Var forward(const Context<T>& ctx, Var x, Var* pi_out = nullptr) const;
};

/// A convolution layer made of branches concatenated along channels, dynamic
/// branches first in the given order, the static branch last. A single static
/// branch is an ordinary convolution; a single 8/8 dynamic branch is FDY.
struct ConvLayer {
  std::size_t index = 0;  // 1-based layer number, used for recording
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<DynamicBranch> dynamic;
  std::optional<Conv> static_conv;
  std::size_t static_channels = 0;

  template <class T>
  static ConvLayer create(ParamStore<T>& store, const std::string& name, std::size_t index,
                          std::size_t cin, std::size_t base_cout,
                          const std::vector<BranchSpec>& branches, std::mt19937_64& rng);

  bool is_dynamic() const { return !dynamic.empty(); }

  template <class T>
  Var forward(const Context<T>& ctx, Var x) const;
};

}  // namespace freqdyn::nn

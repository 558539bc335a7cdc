// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "freqdyn/numerics/tape.hpp"

namespace freqdyn::trainer {

inline constexpr double kBceClamp = 1e-7;

/// Mean over every element of -[l log p + (1-l) log(1-p)], p clamped to
/// [eps, 1-eps]. Targets must lie in [0,1].
template <class T>
Var bce_loss(Tape<T>& tape, Var pred, const Tensor<T>& target, double eps = kBceClamp);

/// Mean squared error against a fixed target; no gradient reaches `target`.
template <class T>
Var mse_loss(Tape<T>& tape, Var pred, const Tensor<T>& target);

/// MSE(strong) + MSE(weak) against teacher outputs.
template <class T>
Var consistency_loss(Tape<T>& tape, Var student_strong, Var student_weak,
                     const Tensor<T>& teacher_strong, const Tensor<T>& teacher_weak);

struct LossWeights {
  double w_weak = 0.5;
  double w_cons_max = 2.0;
  double ramp_epochs = 50;
};

/// w_C(epoch) = w_cons_max * min(1, epoch / ramp_epochs).
double consistency_weight(double epoch, const LossWeights& w);

struct LossComponents {
  double strong = 0, weak = 0, consistency = 0, w_cons = 0, total = 0;
};

/// Batch layout: the first n_strong clips are strong, the next n_weak weak,
/// the rest unlabeled. strong_target is n_strong x T' x C, weak_target is
/// (n_strong + n_weak) x C.
struct BatchTargets {
  std::size_t n_strong = 0, n_weak = 0, n_unlabeled = 0;
  Tensor<float> strong_target;
  Tensor<float> weak_target;
};

/// L = L_strong + w_weak L_weak + w_C(epoch) L_cons. Terms whose subset is
/// empty contribute zero. Returns the scalar handle and fills `parts`.
template <class T>
Var total_loss(Tape<T>& tape, Var strong, Var weak, const Tensor<T>& teacher_strong,
               const Tensor<T>& teacher_weak, const BatchTargets& targets, double epoch,
               const LossWeights& w, LossComponents& parts);

}  // namespace freqdyn::trainer

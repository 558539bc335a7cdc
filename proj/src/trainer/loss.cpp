// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/trainer/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "freqdyn/numerics/ops.hpp"

namespace freqdyn::trainer {
namespace {

template <class T>
Tensor<T> cast(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    Tensor<T> o(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) o[i] = static_cast<T>(t[i]);
    return o;
  }
}

}  // namespace

template <class T>
Var bce_loss(Tape<T>& tape, Var pred, const Tensor<T>& target, double eps) {
  const Tensor<T>& p = tape.value(pred);
  require_shape(target, p.shape(), "bce_loss target");
  for (T l : target.data()) {
    if (!(l >= 0 && l <= 1)) throw std::domain_error("bce_loss: target outside [0,1]");
  }
  const std::size_t n = p.size();
  if (n == 0) throw ShapeError("bce_loss: empty input");
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), eps, 1.0 - eps);
    const double l = target[i];
    s -= l * std::log(q) + (1 - l) * std::log1p(-q);
  }
  Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(n)));
  return tape.push(std::move(out), {pred}, [target, eps](Tape<T>& tp, std::size_t self) {
    const std::size_t in = tp.input(self, 0);
    const Tensor<T>& pv = tp.value(in);
    const double g = tp.grad(self)[0] / static_cast<double>(pv.size());
    Tensor<T> d(pv.shape());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double q = pv[i];
      if (q < eps || q > 1.0 - eps) continue;  // clamped: flat
      d[i] = static_cast<T>(g * (q - target[i]) / (q * (1 - q)));
    }
    ops::accumulate(tp, in, d);
  });
}

template <class T>
Var mse_loss(Tape<T>& tape, Var pred, const Tensor<T>& target) {
  const Tensor<T>& p = tape.value(pred);
  require_shape(target, p.shape(), "mse_loss target");
  if (p.size() == 0) throw ShapeError("mse_loss: empty input");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - target[i];
    s += d * d;
  }
  Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(p.size())));
  return tape.push(std::move(out), {pred}, [target](Tape<T>& tp, std::size_t self) {
    const std::size_t in = tp.input(self, 0);
    const Tensor<T>& pv = tp.value(in);
    const double g = 2.0 * tp.grad(self)[0] / static_cast<double>(pv.size());
    Tensor<T> d(pv.shape());
    for (std::size_t i = 0; i < pv.size(); ++i) d[i] = static_cast<T>(g * (pv[i] - target[i]));
    ops::accumulate(tp, in, d);
  });
}

template <class T>
Var consistency_loss(Tape<T>& tape, Var student_strong, Var student_weak,
                     const Tensor<T>& teacher_strong, const Tensor<T>& teacher_weak) {
  return ops::add(tape, mse_loss(tape, student_strong, teacher_strong),
                  mse_loss(tape, student_weak, teacher_weak));
}

double consistency_weight(double epoch, const LossWeights& w) {
  if (w.ramp_epochs <= 0) return w.w_cons_max;
  return w.w_cons_max * std::min(1.0, std::max(0.0, epoch) / w.ramp_epochs);
}

template <class T>
Var total_loss(Tape<T>& tape, Var strong, Var weak, const Tensor<T>& teacher_strong,
               const Tensor<T>& teacher_weak, const BatchTargets& targets, double epoch,
               const LossWeights& w, LossComponents& parts) {
  const std::size_t ns = targets.n_strong, nl = ns + targets.n_weak;
  const std::size_t B = tape.shape(strong).at(0);
  if (nl + targets.n_unlabeled != B) throw ShapeError("total_loss: batch layout does not match predictions");
  parts = {};
  parts.w_cons = consistency_weight(epoch, w);
  Var total = tape.constant(Tensor<T>({1}));
  if (ns > 0) {
    const Var s = bce_loss(tape, ops::slice(tape, strong, 0, 0, ns), cast<T>(targets.strong_target));
    parts.strong = tape.value(s)[0];
    total = ops::add(tape, total, s);
  }
  if (nl > 0) {
    const Var wl = bce_loss(tape, ops::slice(tape, weak, 0, 0, nl), cast<T>(targets.weak_target));
    parts.weak = tape.value(wl)[0];
    total = ops::add(tape, total, ops::scale(tape, wl, static_cast<T>(w.w_weak)));
  }
  const Var c = consistency_loss(tape, strong, weak, teacher_strong, teacher_weak);
  parts.consistency = tape.value(c)[0];
  if (parts.w_cons != 0) total = ops::add(tape, total, ops::scale(tape, c, static_cast<T>(parts.w_cons)));
  parts.total = tape.value(total)[0];
  return total;
}

#define FREQDYN_INSTANTIATE(T)                                                                  \
  template Var bce_loss<T>(Tape<T>&, Var, const Tensor<T>&, double);                            \
  template Var mse_loss<T>(Tape<T>&, Var, const Tensor<T>&);                                    \
  template Var consistency_loss<T>(Tape<T>&, Var, Var, const Tensor<T>&, const Tensor<T>&);     \
  template Var total_loss<T>(Tape<T>&, Var, Var, const Tensor<T>&, const Tensor<T>&,            \
                             const BatchTargets&, double, const LossWeights&, LossComponents&);
FREQDYN_INSTANTIATE(float)
FREQDYN_INSTANTIATE(double)
#undef FREQDYN_INSTANTIATE

}  // namespace freqdyn::trainer

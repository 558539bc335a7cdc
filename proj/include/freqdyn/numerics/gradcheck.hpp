// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "freqdyn/numerics/tape.hpp"

namespace freqdyn {

/// Builds a scalar from leaf inputs on the given tape.
using GradFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords = 0;  // coordinates probed
};

/// Compares tape gradients of `fn` against central differences for every
/// coordinate of every input. Relative error uses max(|a|, |b|, 1e-8) as the
/// denominator. Throws std::domain_error on non-finite values.
/// With max_coords > 0 only that many evenly spaced coordinates of each input
/// are probed.
GradCheckResult grad_check(const GradFn& fn,
                           const std::vector<Tensor<double>>& inputs,
                           double eps = 1e-6, std::size_t max_coords = 0);

}  // namespace freqdyn

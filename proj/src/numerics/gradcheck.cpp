// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace freqdyn {
namespace {

double evaluate(const GradFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var out = fn(tape, vars);
  const Tensor<double>& v = tape.value(out);
  if (v.size() != 1) throw ShapeError("grad_check: function must return a scalar");
  if (!std::isfinite(v[0])) throw std::domain_error("grad_check: non-finite function value");
  return v[0];
}

}  // namespace

GradCheckResult grad_check(const GradFn& fn,
                           const std::vector<Tensor<double>>& inputs,
                           double eps, std::size_t max_coords) {
  for (const auto& t : inputs) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite input");
    }
  }
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
  const Var out = fn(tape, vars);
  tape.backward(out);

  GradCheckResult result;
  std::size_t coords = 0;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic =
        tape.has_grad(vars[k]) ? tape.grad(vars[k]) : Tensor<double>(inputs[k].shape());
    const std::size_t n = inputs[k].size();
    const std::size_t probes = max_coords == 0 ? n : std::min(n, max_coords);
    for (std::size_t q = 0; q < probes; ++q) {
      const std::size_t i = probes == n ? q : q * n / probes;
      ++coords;
      const double orig = probe[k][i];
      const double up = orig + eps, down = orig - eps;
      probe[k][i] = up;
      const double fp = evaluate(fn, probe);
      probe[k][i] = down;
      const double fm = evaluate(fn, probe);
      probe[k][i] = orig;
      // divide by the step actually taken after rounding
      const double numeric = (fp - fm) / (up - down);
      const double a = analytic[i];
      if (!std::isfinite(a)) throw std::domain_error("grad_check: non-finite gradient");
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result = {rel, k, i, a, numeric, 0};
      }
    }
  }
  result.coords = coords;
  return result;
}

}  // namespace freqdyn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "freqdyn/numerics/gradcheck.hpp"
#include <vector>

namespace freqdyn::crnn {

enum class GradScope { primitive, variant, model };

/// 1e-4 for primitives and single layers; 1e-3 for whole networks, whose
/// recurrent part shares the GRU bound.
double default_tolerance(GradScope scope);

GradScope parse_grad_scope(const std::string& s);

struct GradCaseResult {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0;
  std::size_t coords = 0;
  double seconds = 0;
  bool passed = false;
  GradCheckResult worst;  // coordinate with the largest error
  // parameters the output is invariant to (bias under a time softmax or
  // ahead of train-mode batch norm): held fixed, tape gradient must vanish
  std::size_t fixed_params = 0;
  double fixed_grad = 0;
};

struct GradSuiteOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double tolerance = 1e-4;
  double eps = 1e-5;
  double zero_tolerance = 1e-10;  // bound on the fixed parameters' gradient
  std::function<void(const GradCaseResult&)> on_case;
};

/// Finite-difference checks in double precision. primitive: every
/// differentiable op; variant: one conv layer of each kind (plain, fdy, dfd,
/// pfd, mdfd, tfd) with every parameter; model: a reduced toy CRNN on a
/// sample of coordinates per tensor.
std::vector<GradCaseResult> run_grad_suite(GradScope scope, const GradSuiteOptions& opt = {});

/// Case names available at a scope.
std::vector<std::string> grad_case_names(GradScope scope);

}  // namespace freqdyn::crnn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "freqdyn/numerics/ops.hpp"
#include "freqdyn/numerics/tape.hpp"
#include "freqdyn/numerics/tensor.hpp"

namespace freqdyn {

/// Named trainable tensors plus batch-norm running statistics. Layers keep
/// indices into the store; a forward pass binds every parameter to a tape
/// leaf once and looks the handles up by index.
template <class T>
class ParamStore {
 public:
  struct Param {
    std::string name;
    Tensor<T> value;
  };
  struct BatchNormBuffer {
    std::string name;
    ops::BatchNormState<T> state;
  };

  std::size_t add(std::string name, Tensor<T> init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(init)});
    return params_.size() - 1;
  }

  /// Running statistics start at mean 0, variance 1.
  std::size_t add_batch_norm_state(std::string name, std::size_t channels) {
    bn_.push_back({std::move(name),
                   {Tensor<T>({channels}, T{0}), Tensor<T>({channels}, T{1})}});
    return bn_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Param& param(std::size_t i) { return params_.at(i); }
  const Param& param(std::size_t i) const { return params_.at(i); }
  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  std::size_t find(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  ops::BatchNormState<T>& bn_state(std::size_t i) { return bn_.at(i).state; }
  std::vector<BatchNormBuffer>& bn_states() noexcept { return bn_; }
  const std::vector<BatchNormBuffer>& bn_states() const noexcept { return bn_; }

  std::vector<Var> bind(Tape<T>& tape, bool requires_grad) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
    return vars;
  }

  /// Copies values of every parameter whose name also exists in `src`.
  /// Returns the number copied.
  std::size_t copy_matching(const ParamStore& src) {
    std::size_t n = 0;
    for (auto& p : params_) {
      if (!src.contains(p.name)) continue;
      const auto& v = src.param(src.find(p.name)).value;
      require_shape(v, p.value.shape(), ("copy_matching " + p.name).c_str());
      p.value = v;
      ++n;
    }
    return n;
  }

 private:
  std::vector<Param> params_;
  std::vector<BatchNormBuffer> bn_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// He-uniform initialization, bound sqrt(6 / fan_in).
template <class T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

template <class T>
Tensor<T> uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

}  // namespace freqdyn

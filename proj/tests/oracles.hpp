// SPDX-License-Identifier: Apache-2.0
// Brute-force references and fixtures shared by the unit tests and the
// acceptance binary.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "freqdyn/common/rng.hpp"
#include "freqdyn/crnn/config.hpp"
#include "freqdyn/dynconv/dynconv.hpp"
#include "freqdyn/evalkit/diagnostics.hpp"
#include "freqdyn/evalkit/metrics.hpp"
#include "test_util.hpp"

namespace freqdyn::testing {

// softmax over axis 1 of a B x K x F x 1 tensor, computed directly
template <class T>
Tensor<T> random_pi(std::size_t B, std::size_t K, std::size_t F, std::uint64_t seed) {
  auto z = random_tensor<T>({B, K, F, 1}, seed, -2, 2);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) s += std::exp(double(z.at(b, k, f, 0)));
      for (std::size_t k = 0; k < K; ++k) z.at(b, k, f, 0) = T(std::exp(double(z.at(b, k, f, 0))) / s);
    }
  return z;
}

template <class T>
nn::BasisKernelSet<T> random_kernels(std::size_t K, std::size_t cout, std::size_t cin, bool bias,
                                     std::uint64_t seed) {
  nn::BasisKernelSet<T> ks;
  for (std::size_t k = 0; k < K; ++k) {
    ks.weights.push_back(random_tensor<T>({cout, cin, 3, 3}, seed + 10 * k));
    if (bias) ks.biases.push_back(random_tensor<T>({cout}, seed + 10 * k + 1));
    ks.dilations.push_back({1, 1});
  }
  return ks;
}

// Runs a layer in eval or train mode on a fresh tape.
inline Tensor<double> run_layer(const nn::ConvLayer& layer, ParamStore<double>& store,
                                const Tensor<double>& x, bool train) {
  Tape<double> tape(false);
  const auto vars = store.bind(tape, false);
  std::mt19937_64 rng(0);
  nn::Context<double> ctx{tape, vars, store, train, &rng, nullptr};
  return tape.value(layer.forward(ctx, tape.constant(x)));
}

struct BuiltLayer {
  ParamStore<double> store;
  nn::ConvLayer layer;
};

inline BuiltLayer build_layer(const std::vector<nn::BranchSpec>& branches, std::size_t cin,
                              std::size_t cout, std::uint64_t seed = 42) {
  BuiltLayer b;
  auto rng = substream(seed, "oracles.layer");
  b.layer = nn::ConvLayer::create(b.store, "layer", 2, cin, cout, branches, rng);
  // generic values everywhere, including zero-initialized biases
  auto vals = substream(seed + 1, "oracles.values");
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (auto& p : b.store.params()) {
    for (auto& v : p.value.data()) v = p.name.ends_with(".gamma") ? 1.0 + d(vals) : d(vals);
  }
  return b;
}

struct ReductionCase {
  const char* name;
  crnn::ModelConfig cfg;
};

// TFD(AP only), DFD(all 1), PFD(8/8), MDFD(one 8/8 branch), each meant to
// equal the FDY configuration it is paired with.
inline std::vector<ReductionCase> reduction_cases(crnn::ModelConfig& fdy) {
  auto config = [](crnn::Variant v) {
    crnn::ModelConfig c = crnn::preset("toy-fdy");
    c.variant = v;
    c.dilation_layers = {3};
    return c;
  };
  fdy = config(crnn::Variant::fdy);
  auto tfd = config(crnn::Variant::tfd);
  tfd.attention.tap = nn::TapTerms{false, false, true};
  auto dfd = config(crnn::Variant::dfd);
  dfd.dilations = {{1, 1}, {1, 1}, {1, 1}, {1, 1}};
  auto pfd = config(crnn::Variant::pfd);
  pfd.fraction = {8, 8};
  auto mdfd = config(crnn::Variant::mdfd);
  mdfd.branch_dilations = {{1, 1, 1, 1}};
  mdfd.branch_fraction = {8, 8};
  return {{"tfd(ap)", tfd}, {"dfd(1,1,1,1)", dfd}, {"pfd(8/8)", pfd}, {"mdfd(8/8)", mdfd}};
}

// ---- evaluation oracles ----------------------------------------------------

// Centered, edge-clipped median by full sort of each window.
inline Tensor<float> brute_median(const Tensor<float>& x, std::size_t window) {
  const std::size_t T = x.dim(0), C = x.dim(1), h = window / 2;
  Tensor<float> y({T, C});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<float> w;
      for (std::size_t i = (t >= h ? t - h : 0); i < std::min(T, t + h + 1); ++i) w.push_back(x.at(i, c));
      std::sort(w.begin(), w.end());
      const std::size_t n = w.size();
      y.at(t, c) = n % 2 ? w[n / 2] : 0.5f * (w[n / 2 - 1] + w[n / 2]);
    }
  return y;
}

// Maximum one-to-one matching by exhaustive search over reference choices.
inline std::size_t optimal_matches(const std::vector<datakit::EventInterval>& ref,
                                   const std::vector<datakit::EventInterval>& hyp,
                                   const evalkit::CollarSpec& spec = {}) {
  std::vector<bool> used(ref.size(), false);
  std::function<std::size_t(std::size_t)> go = [&](std::size_t j) -> std::size_t {
    if (j == hyp.size()) return 0;
    std::size_t best = go(j + 1);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (used[i] || !evalkit::collar_match(ref[i], hyp[j], spec)) continue;
      used[i] = true;
      best = std::max(best, 1 + go(j + 1));
      used[i] = false;
    }
    return best;
  };
  return go(0);
}

// Same-class references and hypotheses, each set free of self-overlap, with
// hypotheses jittered around references so collars are contested.
inline void random_events(std::mt19937_64& rng, std::size_t n_classes,
                          std::vector<datakit::EventInterval>& ref,
                          std::vector<datakit::EventInterval>& hyp) {
  auto disjoint = [](std::vector<datakit::EventInterval> ev) {
    std::sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });
    std::vector<datakit::EventInterval> out;
    for (const auto& e : ev) {
      bool clash = false;
      for (const auto& o : out) clash |= o.class_id == e.class_id && o.offset > e.onset;
      if (!clash) out.push_back(e);
    }
    return out;
  };
  std::uniform_int_distribution<std::size_t> count(0, 8), cls(0, n_classes - 1);
  std::uniform_real_distribution<double> on(0.0, 9.0), len(0.1, 1.5), jit(-0.35, 0.35), u(0, 1);
  std::vector<datakit::EventInterval> r, h;
  const std::size_t nr = count(rng);
  for (std::size_t i = 0; i < nr; ++i) {
    const double o = on(rng);
    r.push_back({cls(rng), o, o + len(rng)});
  }
  ref = disjoint(r);
  for (const auto& e : ref) {
    const std::size_t copies = u(rng) < 0.3 ? 2 : 1;
    for (std::size_t k = 0; k < copies; ++k) {
      const double o = std::max(0.0, e.onset + jit(rng));
      h.push_back({e.class_id, o, std::max(o + 0.05, e.offset + jit(rng))});
    }
  }
  const std::size_t extra = count(rng) / 4;
  for (std::size_t i = 0; i < extra; ++i) {
    const double o = on(rng);
    h.push_back({cls(rng), o, o + len(rng)});
  }
  hyp = disjoint(h);
  if (hyp.size() > 8) hyp.resize(8);
}

inline double variance_double_loop(const evalkit::VectorSet& w) {
  const auto N = w.rows(), K = w.cols();
  double total = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    double d = 0;
    for (Eigen::Index k = 0; k < K; ++k) {
      double mean = 0;
      for (Eigen::Index j = 0; j < N; ++j) mean += w(j, k);
      mean /= double(N);
      d += (mean - w(i, k)) * (mean - w(i, k));
    }
    total += d;
  }
  return total / double(N);
}

}  // namespace freqdyn::testing

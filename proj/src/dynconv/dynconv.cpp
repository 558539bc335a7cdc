// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/dynconv/dynconv.hpp"

#include <charconv>
#include <numeric>
#include <stdexcept>

namespace freqdyn::nn {

Fraction Fraction::parse(const std::string& text) {
  const auto slash = text.find('/');
  auto parse_long = [&](std::string_view s) {
    long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw std::invalid_argument("bad fraction \"" + text + "\"");
    }
    return v;
  };
  Fraction f;
  if (slash == std::string::npos) {
    f = {parse_long(text), 1};
  } else {
    f = {parse_long(std::string_view(text).substr(0, slash)),
         parse_long(std::string_view(text).substr(slash + 1))};
  }
  if (f.num < 0 || f.den <= 0) throw std::invalid_argument("bad fraction \"" + text + "\"");
  const long g = std::gcd(f.num, f.den);
  if (g > 1) {
    f.num /= g;
    f.den /= g;
  }
  return f;
}

std::string Fraction::str() const { return std::to_string(num) + "/" + std::to_string(den); }

std::size_t fraction_of(std::size_t base, Fraction f, const std::string& what) {
  const long long scaled = static_cast<long long>(base) * f.num;
  if (scaled % f.den != 0) {
    throw std::invalid_argument(what + ": " + f.str() + " of " + std::to_string(base) +
                                " channels is not an integer");
  }
  return static_cast<std::size_t>(scaled / f.den);
}

bool BranchSpec::dilated() const {
  for (const auto& d : dilations) {
    if (d.freq != 1 || d.time != 1) return true;
  }
  return false;
}

template <class T>
Var basis_mix(Tape<T>& tape, std::span<const Var> ys, Var pi) {
  if (ys.empty()) throw ShapeError("basis_mix: no kernel outputs");
  const Shape& s = tape.shape(ys[0]);
  require_rank(tape.value(ys[0]), 4, "basis_mix output");
  for (Var y : ys) require_shape(tape.value(y), s, "basis_mix kernel output");
  const std::size_t B = s[0], C = s[1], F = s[2], Tn = s[3], K = ys.size();
  require_shape(tape.value(pi), Shape{B, K, F, 1}, "basis_mix attention");

  const Tensor<T>& pv = tape.value(pi);
  Tensor<T> out(s);
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor<T>& yv = tape.value(ys[k]);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t f = 0; f < F; ++f) {
          const T w = pv[(b * K + k) * F + f];
          const std::size_t off = ((b * C + c) * F + f) * Tn;
          for (std::size_t t = 0; t < Tn; ++t) out[off + t] += w * yv[off + t];
        }
  }
  std::vector<Var> inputs(ys.begin(), ys.end());
  inputs.push_back(pi);
  return tape.push(std::move(out), std::move(inputs), [K, B, C, F, Tn](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& dy = tp.grad(self);
    const std::size_t pi_id = tp.input(self, K);
    const Tensor<T>& pv = tp.value(pi_id);
    const bool want_pi = tp.requires_grad(pi_id);
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t yi = tp.input(self, k);
      const bool want_y = tp.requires_grad(yi);
      if (!want_y && !want_pi) continue;
      const Tensor<T>& yv = tp.value(yi);
      Tensor<T>* dyk = want_y ? &tp.grad(yi) : nullptr;
      Tensor<T>* dpi = want_pi ? &tp.grad(pi_id) : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t f = 0; f < F; ++f) {
            const std::size_t pidx = (b * K + k) * F + f;
            const T w = pv[pidx];
            const std::size_t off = ((b * C + c) * F + f) * Tn;
            T acc{};
            for (std::size_t t = 0; t < Tn; ++t) {
              if (dyk) (*dyk)[off + t] += w * dy[off + t];
              acc += dy[off + t] * yv[off + t];
            }
            if (dpi) (*dpi)[pidx] += acc;
          }
    }
  });
}

template <class T>
Var dynamic_conv(Tape<T>& tape, Var x, std::span<const Var> kernels, std::span<const Var> biases,
                 std::span<const ops::FreqTime> dilations, Var pi) {
  const std::size_t K = kernels.size();
  if (K == 0) throw std::invalid_argument("dynamic_conv: K must be >= 1");
  if (dilations.size() != K) throw std::invalid_argument("dynamic_conv: one dilation per kernel required");
  if (!biases.empty() && biases.size() != K) {
    throw std::invalid_argument("dynamic_conv: biases must be empty or one per kernel");
  }
  if (tape.shape(pi).size() != 4 || tape.shape(pi)[1] != K) {
    throw ShapeError("dynamic_conv: attention has shape " + shape_str(tape.shape(pi)) + " for K=" +
                     std::to_string(K));
  }
  const Shape& xs = tape.shape(x);
  const Shape& ks = tape.shape(kernels[0]);
  for (const auto& d : dilations) {
    // outer taps must reach at least one real row/frame
    if (d.freq < 1 || d.time < 1) throw std::invalid_argument("dynamic_conv: dilations must be >= 1");
    if (xs.size() == 4 && ks.size() == 4 &&
        ((d.freq > 1 && d.freq * (ks[2] / 2) >= xs[2]) || (d.time > 1 && d.time * (ks[3] / 2) >= xs[3]))) {
      throw std::invalid_argument("dynamic_conv: dilation (" + std::to_string(d.freq) + "," + std::to_string(d.time) +
                                  ") exceeds the padded support of a " + std::to_string(xs[2]) + "x" +
                                  std::to_string(xs[3]) + " input");
    }
  }
  const std::size_t cout = ks[0];
  std::vector<Var> ys(K);
  std::vector<bool> done(K, false);
  for (std::size_t i = 0; i < K; ++i) {
    if (done[i]) continue;
    std::vector<std::size_t> group;
    for (std::size_t j = i; j < K; ++j) {
      if (!done[j] && dilations[j] == dilations[i]) {
        group.push_back(j);
        done[j] = true;
      }
    }
    ops::Conv2dOptions opt;
    opt.dilation = dilations[i];
    if (group.size() == 1) {
      std::optional<Var> b;
      if (!biases.empty()) b = biases[i];
      ys[i] = ops::conv2d(tape, x, kernels[i], b, opt);
      continue;
    }
    std::vector<Var> ws, bs;
    for (std::size_t j : group) {
      ws.push_back(kernels[j]);
      if (!biases.empty()) bs.push_back(biases[j]);
    }
    std::optional<Var> b;
    if (!bs.empty()) b = ops::concat(tape, std::span<const Var>(bs), 0);
    Var y = ops::conv2d(tape, x, ops::concat(tape, std::span<const Var>(ws), 0), b, opt);
    for (std::size_t g = 0; g < group.size(); ++g) {
      ys[group[g]] = ops::slice(tape, y, 1, g * cout, (g + 1) * cout);
    }
  }
  return basis_mix(tape, std::span<const Var>(ys), pi);
}

namespace {

template <class T>
void check_set(const BasisKernelSet<T>& set, const char* what) {
  if (set.weights.empty()) throw std::invalid_argument(std::string(what) + ": K must be >= 1");
  if (set.dilations.size() != set.weights.size()) {
    throw std::invalid_argument(std::string(what) + ": one dilation per kernel required");
  }
}

template <class T>
Tensor<T> run_dynamic(const Tensor<T>& x, const BasisKernelSet<T>& set, const Tensor<T>& pi) {
  Tape<T> tape(false);
  Var xv = tape.constant(x);
  std::vector<Var> ws, bs;
  for (const auto& w : set.weights) ws.push_back(tape.constant(w));
  for (const auto& b : set.biases) bs.push_back(tape.constant(b));
  Var out = dynamic_conv(tape, xv, std::span<const Var>(ws), std::span<const Var>(bs),
                         std::span<const ops::FreqTime>(set.dilations), tape.constant(pi));
  return tape.value(out);
}

// Per output frequency row f, convolve with sum_i pi_i(f) W_i (and the
// pi-weighted bias). Same zero padding as the efficient path.
template <class T>
Tensor<T> fdy_naive(const Tensor<T>& x, const BasisKernelSet<T>& set, const Tensor<T>& pi) {
  require_rank(x, 4, "fdy_forward input");
  const std::size_t B = x.dim(0), C = x.dim(1), F = x.dim(2), Tn = x.dim(3);
  const std::size_t K = set.weights.size();
  const Shape& ws = set.weights[0].shape();
  const std::size_t O = ws[0], KF = ws[2], KT = ws[3];
  if (ws[1] != C) throw ShapeError("fdy_forward: kernel expects " + std::to_string(ws[1]) + " channels");
  const std::ptrdiff_t pf = static_cast<std::ptrdiff_t>(KF / 2), pt = static_cast<std::ptrdiff_t>(KT / 2);
  Tensor<T> y({B, O, F, Tn});
  Tensor<T> mixed({O, C, KF, KT});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      mixed.fill(T{0});
      std::vector<T> bias(O, T{0});
      for (std::size_t k = 0; k < K; ++k) {
        const T w = pi[(b * K + k) * F + f];
        const Tensor<T>& W = set.weights[k];
        for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] += w * W[i];
        if (!set.biases.empty()) {
          for (std::size_t o = 0; o < O; ++o) bias[o] += w * set.biases[k][o];
        }
      }
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t t = 0; t < Tn; ++t) {
          T s = bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < KF; ++i) {
              const std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(f + i) - pf;
              if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(F)) continue;
              for (std::size_t j = 0; j < KT; ++j) {
                const std::ptrdiff_t tj = static_cast<std::ptrdiff_t>(t + j) - pt;
                if (tj < 0 || tj >= static_cast<std::ptrdiff_t>(Tn)) continue;
                s += mixed.at(o, c, i, j) * x.at(b, c, static_cast<std::size_t>(fi), static_cast<std::size_t>(tj));
              }
            }
          y.at(b, o, f, t) = s;
        }
    }
  }
  return y;
}

}  // namespace

template <class T>
Tensor<T> fdy_forward(const Tensor<T>& x, const BasisKernelSet<T>& set, const Tensor<T>& pi,
                      FdyMode mode) {
  check_set(set, "fdy_forward");
  for (const auto& d : set.dilations) {
    if (d.freq != 1 || d.time != 1) throw std::invalid_argument("fdy_forward: dilations must all be 1; use dfd_forward");
  }
  const std::size_t K = set.weights.size();
  require_rank(x, 4, "fdy_forward input");
  require_shape(pi, Shape{x.dim(0), K, x.dim(2), 1}, "fdy_forward attention");
  if (mode == FdyMode::naive) return fdy_naive(x, set, pi);
  return run_dynamic(x, set, pi);
}

template <class T>
Tensor<T> dfd_forward(const Tensor<T>& x, const BasisKernelSet<T>& set, const Tensor<T>& pi) {
  check_set(set, "dfd_forward");
  return run_dynamic(x, set, pi);
}

template <class T>
DynamicBranch DynamicBranch::create(ParamStore<T>& store, const std::string& name, std::size_t cin,
                                    std::size_t cout, const BranchSpec& spec, std::mt19937_64& rng) {
  if (spec.K() < 1) throw std::invalid_argument(name + ": K must be >= 1");
  if (spec.attention.K != spec.K()) {
    throw std::invalid_argument(name + ": attention K differs from the number of dilations");
  }
  for (const auto& d : spec.dilations) {
    if (d.freq < 1 || d.time < 1) throw std::invalid_argument(name + ": dilations must be >= 1");
  }
  DynamicBranch br;
  br.spec = spec;
  br.out_channels = cout;
  for (std::size_t k = 0; k < spec.K(); ++k) {
    br.kernels.push_back(store.add(name + ".kernel" + std::to_string(k),
                                   he_uniform<T>({cout, cin, 3, 3}, cin * 9, rng)));
    if (spec.bias) br.biases.push_back(store.add(name + ".bias" + std::to_string(k), Tensor<T>({cout})));
  }
  br.attention = FreqAttention::create(store, name + ".att", cin, spec.attention, rng);
  return br;
}

template <class T>
Var DynamicBranch::forward(const Context<T>& ctx, Var x, Var* pi_out) const {
  Var pi = attention.forward(ctx, x);
  if (pi_out) *pi_out = pi;
  std::vector<Var> ws, bs;
  for (std::size_t k : kernels) ws.push_back(ctx.param(k));
  for (std::size_t b : biases) bs.push_back(ctx.param(b));
  return dynamic_conv(ctx.tape, x, std::span<const Var>(ws), std::span<const Var>(bs),
                      std::span<const ops::FreqTime>(spec.dilations), pi);
}

template <class T>
ConvLayer ConvLayer::create(ParamStore<T>& store, const std::string& name, std::size_t index,
                            std::size_t cin, std::size_t base_cout, const std::vector<BranchSpec>& branches,
                            std::mt19937_64& rng) {
  if (branches.empty()) throw std::invalid_argument(name + ": empty branch list");
  ConvLayer layer;
  layer.index = index;
  layer.in_channels = cin;
  const BranchSpec* static_spec = nullptr;
  std::size_t n = 0;
  for (const auto& b : branches) {
    if (b.kind == BranchKind::static_conv) {
      if (static_spec) throw std::invalid_argument(name + ": more than one static branch");
      static_spec = &b;
      continue;
    }
    const std::size_t c = fraction_of(base_cout, b.fraction, name + " dynamic branch");
    if (c == 0) throw std::invalid_argument(name + ": dynamic branch with zero channels");
    layer.dynamic.push_back(
        DynamicBranch::create(store, name + ".dyn" + std::to_string(n++), cin, c, b, rng));
    layer.out_channels += c;
  }
  if (static_spec) {
    layer.static_channels = fraction_of(base_cout, static_spec->fraction, name + " static branch");
    if (layer.static_channels > 0) {
      layer.static_conv = Conv::create(store, name + ".static", cin, layer.static_channels, {3, 3}, true, rng);
      layer.out_channels += layer.static_channels;
    }
  }
  if (layer.out_channels == 0) throw std::invalid_argument(name + ": layer has no output channels");
  return layer;
}

template <class T>
Var ConvLayer::forward(const Context<T>& ctx, Var x) const {
  std::vector<Var> outs;
  for (std::size_t i = 0; i < dynamic.size(); ++i) {
    Var pi;
    outs.push_back(dynamic[i].forward(ctx, x, &pi));
    if (ctx.recorder) {
      typename AttentionRecorder<T>::Entry e;
      e.layer = index;
      e.branch = i;
      e.pi = ctx.tape.value(pi);
      if (ctx.recorder->capture_inputs) e.input = ctx.tape.value(x);
      ctx.recorder->entries.push_back(std::move(e));
    }
  }
  if (static_conv) outs.push_back(static_conv->forward(ctx, x));
  if (outs.size() == 1) return outs[0];
  return ops::concat(ctx.tape, std::span<const Var>(outs), 1);
}

#define FREQDYN_INSTANTIATE_DYNCONV(T)                                                             \
  template Var basis_mix<T>(Tape<T>&, std::span<const Var>, Var);                                  \
  template Var dynamic_conv<T>(Tape<T>&, Var, std::span<const Var>, std::span<const Var>,          \
                               std::span<const ops::FreqTime>, Var);                               \
  template Tensor<T> fdy_forward<T>(const Tensor<T>&, const BasisKernelSet<T>&, const Tensor<T>&,  \
                                    FdyMode);                                                      \
  template Tensor<T> dfd_forward<T>(const Tensor<T>&, const BasisKernelSet<T>&, const Tensor<T>&); \
  template DynamicBranch DynamicBranch::create<T>(ParamStore<T>&, const std::string&, std::size_t, \
                                                  std::size_t, const BranchSpec&,                  \
                                                  std::mt19937_64&);                               \
  template Var DynamicBranch::forward<T>(const Context<T>&, Var, Var*) const;                      \
  template ConvLayer ConvLayer::create<T>(ParamStore<T>&, const std::string&, std::size_t,         \
                                          std::size_t, std::size_t, const std::vector<BranchSpec>&, \
                                          std::mt19937_64&);                                       \
  template Var ConvLayer::forward<T>(const Context<T>&, Var) const;

FREQDYN_INSTANTIATE_DYNCONV(float)
FREQDYN_INSTANTIATE_DYNCONV(double)

}  // namespace freqdyn::nn

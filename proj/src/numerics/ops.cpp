// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace freqdyn {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace ops {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

struct ConvGeom {
  std::size_t batch, cin, f, t, cout, kf, kt, of, ot;
  std::size_t df, dt;
  std::ptrdiff_t pf, pt;
};

ConvGeom conv_geom(const Shape& x, const Shape& w, const Conv2dOptions& opt) {
  if (x.size() != 4) {
    throw ShapeError("conv2d: input must be B x Cin x F x T, got " +
                     shape_str(x));
  }
  if (w.size() != 4) {
    throw ShapeError("conv2d: kernel must be Cout x Cin x kF x kT, got " +
                     shape_str(w));
  }
  if (shape_size(x) == 0) throw ShapeError("conv2d: zero-size input");
  if (x[1] != w[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(x[1]) +
                     " channels but kernel expects " + std::to_string(w[1]) +
                     " (input " + shape_str(x) + ", kernel " + shape_str(w) +
                     ")");
  }
  if (opt.dilation.freq == 0 || opt.dilation.time == 0) {
    throw std::invalid_argument("conv2d: dilation must be >= 1");
  }
  ConvGeom g{};
  g.batch = x[0];
  g.cin = x[1];
  g.f = x[2];
  g.t = x[3];
  g.cout = w[0];
  g.kf = w[2];
  g.kt = w[3];
  g.df = opt.dilation.freq;
  g.dt = opt.dilation.time;
  if (opt.same) {
    if (g.kf % 2 == 0 || g.kt % 2 == 0) {
      throw ShapeError("conv2d: same padding needs odd kernel extents, got " +
                       shape_str(w));
    }
    g.pf = static_cast<std::ptrdiff_t>((g.kf - 1) * g.df / 2);
    g.pt = static_cast<std::ptrdiff_t>((g.kt - 1) * g.dt / 2);
  } else {
    g.pf = static_cast<std::ptrdiff_t>(opt.padding.freq);
    g.pt = static_cast<std::ptrdiff_t>(opt.padding.time);
  }
  const std::ptrdiff_t ef = static_cast<std::ptrdiff_t>((g.kf - 1) * g.df + 1);
  const std::ptrdiff_t et = static_cast<std::ptrdiff_t>((g.kt - 1) * g.dt + 1);
  const std::ptrdiff_t of = static_cast<std::ptrdiff_t>(g.f) + 2 * g.pf - ef + 1;
  const std::ptrdiff_t ot = static_cast<std::ptrdiff_t>(g.t) + 2 * g.pt - et + 1;
  if (of <= 0 || ot <= 0) {
    throw ShapeError("conv2d: dilated kernel extent " + std::to_string(ef) +
                     "x" + std::to_string(et) +
                     " does not fit padded input " + shape_str(x));
  }
  g.of = static_cast<std::size_t>(of);
  g.ot = static_cast<std::size_t>(ot);
  return g;
}

// col has (cin*kf*kt) rows and (of*ot) columns.
template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t cols = g.of * g.ot;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.f * g.t;
    for (std::size_t i = 0; i < g.kf; ++i) {
      for (std::size_t j = 0; j < g.kt; ++j, ++row) {
        T* dst = col + row * cols;
        const std::ptrdiff_t toff =
            static_cast<std::ptrdiff_t>(j * g.dt) - g.pt;
        // valid output t range: 0 <= t + toff < g.t
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -toff);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(g.ot),
            static_cast<std::ptrdiff_t>(g.t) - toff);
        for (std::size_t f = 0; f < g.of; ++f) {
          T* d = dst + f * g.ot;
          const std::ptrdiff_t fs = static_cast<std::ptrdiff_t>(f + i * g.df) - g.pf;
          if (fs < 0 || fs >= static_cast<std::ptrdiff_t>(g.f) || t1 <= t0) {
            std::fill(d, d + g.ot, T{});
            continue;
          }
          const T* s = xc + static_cast<std::size_t>(fs) * g.t;
          std::fill(d, d + t0, T{});
          std::memcpy(d + t0, s + (t0 + toff),
                      static_cast<std::size_t>(t1 - t0) * sizeof(T));
          std::fill(d + t1, d + g.ot, T{});
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t cols = g.of * g.ot;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* xc = dx + c * g.f * g.t;
    for (std::size_t i = 0; i < g.kf; ++i) {
      for (std::size_t j = 0; j < g.kt; ++j, ++row) {
        const T* src = col + row * cols;
        const std::ptrdiff_t toff =
            static_cast<std::ptrdiff_t>(j * g.dt) - g.pt;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -toff);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(g.ot),
            static_cast<std::ptrdiff_t>(g.t) - toff);
        if (t1 <= t0) continue;
        for (std::size_t f = 0; f < g.of; ++f) {
          const std::ptrdiff_t fs = static_cast<std::ptrdiff_t>(f + i * g.df) - g.pf;
          if (fs < 0 || fs >= static_cast<std::ptrdiff_t>(g.f)) continue;
          const T* s = src + f * g.ot;
          T* d = xc + static_cast<std::size_t>(fs) * g.t + toff;
          for (std::ptrdiff_t t = t0; t < t1; ++t) d[t] += s[t];
        }
      }
    }
  }
}

template <class T>
Tensor<T> add_tensors(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <class T>
void accumulate(Tape<T>& tape, std::size_t id, const Tensor<T>& g) {
  if (!tape.requires_grad(id)) return;
  Tensor<T>& dst = tape.grad(id);
  T* d = dst.raw();
  const T* s = g.raw();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += s[i];
}

FreqTime conv2d_output_extent(const Shape& x, const Shape& w,
                              const Conv2dOptions& opt) {
  const ConvGeom g = conv_geom(x, w, opt);
  return {g.of, g.ot};
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const std::type_identity_t<Tensor<T>>* bias, const Conv2dOptions& opt) {
  const ConvGeom g = conv_geom(x.shape(), w.shape(), opt);
  if (bias && bias->size() != g.cout) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias->size()) +
                     " entries for " + std::to_string(g.cout) +
                     " output channels");
  }
  const std::size_t krows = g.cin * g.kf * g.kt;
  const std::size_t cols = g.of * g.ot;
  Tensor<T> out({g.batch, g.cout, g.of, g.ot});
  std::vector<T> col(krows * cols);
  CMapMat<T> wm(w.raw(), g.cout, krows);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.raw() + b * g.cin * g.f * g.t, g, col.data());
    MapMat<T> om(out.raw() + b * g.cout * cols, g.cout, cols);
    om.noalias() = wm * CMapMat<T>(col.data(), krows, cols);
    if (bias) {
      for (std::size_t o = 0; o < g.cout; ++o) om.row(o).array() += (*bias)[o];
    }
  }
  return out;
}

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> bias,
           const Conv2dOptions& opt) {
  const Tensor<T>* bt = bias ? &tape.value(*bias) : nullptr;
  Tensor<T> out = conv2d_forward(tape.value(x), tape.value(w), bt, opt);
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return tape.push(std::move(out), inputs, [opt, has_bias](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0), wi = tp.input(self, 1);
    const Tensor<T>& xv = tp.value(xi);
    const Tensor<T>& wv = tp.value(wi);
    const Tensor<T>& dy = tp.grad(self);
    const ConvGeom g = conv_geom(xv.shape(), wv.shape(), opt);
    const std::size_t krows = g.cin * g.kf * g.kt;
    const std::size_t cols = g.of * g.ot;
    const bool need_x = tp.requires_grad(xi), need_w = tp.requires_grad(wi);
    std::vector<T> col(krows * cols);
    RowMat<T> dw = RowMat<T>::Zero(g.cout, krows);
    CMapMat<T> wm(wv.raw(), g.cout, krows);
    Tensor<T>* dx = need_x ? &tp.grad(xi) : nullptr;
    for (std::size_t b = 0; b < g.batch; ++b) {
      CMapMat<T> dym(dy.raw() + b * g.cout * cols, g.cout, cols);
      if (need_w) {
        im2col(xv.raw() + b * g.cin * g.f * g.t, g, col.data());
        dw.noalias() += dym * CMapMat<T>(col.data(), krows, cols).transpose();
      }
      if (need_x) {
        MapMat<T> cm(col.data(), krows, cols);
        cm.noalias() = wm.transpose() * dym;
        col2im_add(col.data(), g, dx->raw() + b * g.cin * g.f * g.t);
      }
    }
    if (need_w) {
      Tensor<T>& gw = tp.grad(wi);
      MapMat<T>(gw.raw(), g.cout, krows) += dw;
    }
    if (has_bias) {
      const std::size_t bi = tp.input(self, 2);
      if (tp.requires_grad(bi)) {
        Tensor<T>& gb = tp.grad(bi);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t o = 0; o < g.cout; ++o) {
            const T* d = dy.raw() + (b * g.cout + o) * cols;
            T s{};
            for (std::size_t p = 0; p < cols; ++p) s += d[p];
            gb[o] += s;
          }
        }
      }
    }
  });
}

template <class T>
Var pool2d(Tape<T>& tape, Var x, PoolMode mode, FreqTime window) {
  const Tensor<T>& xv = tape.value(x);
  require_rank(xv, 4, "pool2d");
  const std::size_t B = xv.dim(0), C = xv.dim(1), F = xv.dim(2), Tn = xv.dim(3);
  if (window.freq == 0 || window.time == 0) {
    throw std::invalid_argument("pool2d: window extents must be >= 1");
  }
  if (F % window.freq != 0) {
    throw ShapeError("pool2d: frequency axis extent " + std::to_string(F) +
                     " is not divisible by window " + std::to_string(window.freq));
  }
  if (Tn % window.time != 0) {
    throw ShapeError("pool2d: time axis extent " + std::to_string(Tn) +
                     " is not divisible by window " + std::to_string(window.time));
  }
  const std::size_t OF = F / window.freq, OT = Tn / window.time;
  Tensor<T> out({B, C, OF, OT});
  std::vector<std::uint32_t> argmax;
  if (mode == PoolMode::max) argmax.resize(out.size());
  const T inv = T{1} / static_cast<T>(window.freq * window.time);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* src = xv.raw() + bc * F * Tn;
    T* dst = out.raw() + bc * OF * OT;
    for (std::size_t f = 0; f < OF; ++f) {
      for (std::size_t t = 0; t < OT; ++t) {
        T acc = mode == PoolMode::max ? -std::numeric_limits<T>::infinity() : T{};
        std::uint32_t best = 0;
        for (std::size_t i = 0; i < window.freq; ++i) {
          for (std::size_t j = 0; j < window.time; ++j) {
            const std::size_t off = (f * window.freq + i) * Tn + t * window.time + j;
            const T v = src[off];
            if (mode == PoolMode::max) {
              if (v > acc) {
                acc = v;
                best = static_cast<std::uint32_t>(off);
              }
            } else {
              acc += v;
            }
          }
        }
        dst[f * OT + t] = mode == PoolMode::max ? acc : acc * inv;
        if (mode == PoolMode::max) argmax[bc * OF * OT + f * OT + t] = best;
      }
    }
  }
  return tape.push(std::move(out), {x},
                   [mode, window, F, Tn, OF, OT, argmax = std::move(argmax)](
                       Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    const std::size_t planes = dy.size() / (OF * OT);
    const T inv = T{1} / static_cast<T>(window.freq * window.time);
    for (std::size_t bc = 0; bc < planes; ++bc) {
      T* d = dx.raw() + bc * F * Tn;
      const T* g = dy.raw() + bc * OF * OT;
      for (std::size_t p = 0; p < OF * OT; ++p) {
        if (mode == PoolMode::max) {
          d[argmax[bc * OF * OT + p]] += g[p];
        } else {
          const std::size_t f = p / OT, t = p % OT;
          for (std::size_t i = 0; i < window.freq; ++i) {
            for (std::size_t j = 0; j < window.time; ++j) {
              d[(f * window.freq + i) * Tn + t * window.time + j] += g[p] * inv;
            }
          }
        }
      }
    }
  });
}

template <class T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta,
               BatchNormState<T>& state, bool train, double momentum,
               double eps) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() < 2) throw ShapeError("batch_norm: input rank must be >= 2");
  const std::size_t B = xv.dim(0), C = xv.dim(1);
  const std::size_t inner = xv.size() / (B * C);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  if (gv.size() != C || bv.size() != C) {
    throw ShapeError("batch_norm: input has " + std::to_string(C) +
                     " channels but gamma/beta have " +
                     std::to_string(gv.size()) + "/" +
                     std::to_string(bv.size()));
  }
  const std::size_t n = B * inner;
  std::vector<T> mean(C), invstd(C);
  if (train) {
    if (n < 2) throw ShapeError("batch_norm: training needs >= 2 values per channel");
    if (state.running_mean.size() != C) {
      state.running_mean = Tensor<T>({C}, T{0});
      state.running_var = Tensor<T>({C}, T{1});
    }
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xv.raw() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(n);
      double v = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xv.raw() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(n);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = v / static_cast<double>(n - 1);
      state.running_mean[c] = static_cast<T>((1 - momentum) * state.running_mean[c] + momentum * mu);
      state.running_var[c] = static_cast<T>((1 - momentum) * state.running_var[c] + momentum * unbiased);
    }
  } else {
    if (state.running_mean.size() != C || state.running_var.size() != C) {
      throw std::logic_error("batch_norm: eval mode needs populated running statistics");
    }
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + eps));
    }
  }
  Tensor<T> out(xv.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = xv.raw() + (b * C + c) * inner;
      T* o = out.raw() + (b * C + c) * inner;
      const T sc = gv[c] * invstd[c];
      const T sh = bv[c] - mean[c] * sc;
      for (std::size_t i = 0; i < inner; ++i) o[i] = p[i] * sc + sh;
    }
  }
  return tape.push(std::move(out), {x, gamma, beta},
                   [B, C, inner, train, mean = std::move(mean),
                    invstd = std::move(invstd)](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0), gi = tp.input(self, 1),
                      bi = tp.input(self, 2);
    const Tensor<T>& xv = tp.value(xi);
    const Tensor<T>& gv = tp.value(gi);
    const Tensor<T>& dy = tp.grad(self);
    const double n = static_cast<double>(B * inner);
    std::vector<double> sdy(C, 0.0), sdyx(C, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = xv.raw() + (b * C + c) * inner;
        const T* g = dy.raw() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double xhat = (p[i] - mean[c]) * invstd[c];
          sdy[c] += g[i];
          sdyx[c] += g[i] * xhat;
        }
      }
    }
    if (tp.requires_grad(gi)) {
      Tensor<T>& dg = tp.grad(gi);
      for (std::size_t c = 0; c < C; ++c) dg[c] += static_cast<T>(sdyx[c]);
    }
    if (tp.requires_grad(bi)) {
      Tensor<T>& db = tp.grad(bi);
      for (std::size_t c = 0; c < C; ++c) db[c] += static_cast<T>(sdy[c]);
    }
    if (!tp.requires_grad(xi)) return;
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = xv.raw() + (b * C + c) * inner;
        const T* g = dy.raw() + (b * C + c) * inner;
        T* d = dx.raw() + (b * C + c) * inner;
        const double k = gv[c] * invstd[c];
        if (train) {
          const double mdy = sdy[c] / n, mdyx = sdyx[c] / n;
          for (std::size_t i = 0; i < inner; ++i) {
            const double xhat = (p[i] - mean[c]) * invstd[c];
            d[i] += static_cast<T>(k * (g[i] - mdy - xhat * mdyx));
          }
        } else {
          for (std::size_t i = 0; i < inner; ++i) d[i] += static_cast<T>(k * g[i]);
        }
      }
    }
  });
}

namespace {

template <class T, class Fwd, class Deriv>
Var unary(Tape<T>& tape, Var x, Fwd fwd, Deriv deriv) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return tape.push(std::move(out), {x}, [deriv](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& y = tp.value(self);
    const Tensor<T>& xv = tp.value(xi);
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * deriv(xv[i], y[i]);
  });
}

}  // namespace

template <class T>
Var relu(Tape<T>& tape, Var x) {
  return unary(
      tape, x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Var sigmoid(Tape<T>& tape, Var x) {
  return unary(
      tape, x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var tanh(Tape<T>& tape, Var x) {
  return unary(
      tape, x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T{1} - y * y; });
}

template <class T>
Var softmax(Tape<T>& tape, Var x, std::size_t axis) {
  const Tensor<T>& xv = tape.value(x);
  const AxisSplit s = split_at(xv.shape(), axis);
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      T sum{};
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= sum;
    }
  }
  return tape.push(std::move(out), {x}, [s](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& y = tp.value(self);
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot{};
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t i = base + k * s.inner;
          dot += dy[i] * y[i];
        }
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t i = base + k * s.inner;
          dx[i] += y[i] * (dy[i] - dot);
        }
      }
    }
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same(tape.value(a), tape.value(b), "add");
  return tape.push(add_tensors(tape.value(a), tape.value(b)), {a, b},
                   [](Tape<T>& tp, std::size_t self) {
                     const Tensor<T>& dy = tp.grad(self);
                     accumulate(tp, tp.input(self, 0), dy);
                     accumulate(tp, tp.input(self, 1), dy);
                   });
}

template <class T>
Var sub(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same(av, bv, "sub");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return tape.push(std::move(out), {a, b}, [](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& dy = tp.grad(self);
    accumulate(tp, tp.input(self, 0), dy);
    const std::size_t bi = tp.input(self, 1);
    if (tp.requires_grad(bi)) {
      Tensor<T>& db = tp.grad(bi);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_same(av, bv, "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return tape.push(std::move(out), {a, b}, [](Tape<T>& tp, std::size_t self) {
    const std::size_t ai = tp.input(self, 0), bi = tp.input(self, 1);
    const Tensor<T>& dy = tp.grad(self);
    if (tp.requires_grad(ai)) {
      const Tensor<T>& bv = tp.value(bi);
      Tensor<T>& da = tp.grad(ai);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (tp.requires_grad(bi)) {
      const Tensor<T>& av = tp.value(ai);
      Tensor<T>& db = tp.grad(bi);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T s) {
  const Tensor<T>& av = tape.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  return tape.push(std::move(out), {a}, [s](Tape<T>& tp, std::size_t self) {
    const std::size_t ai = tp.input(self, 0);
    if (!tp.requires_grad(ai)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& da = tp.grad(ai);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
  });
}

namespace {

// For each flat index of `full`, the flat index into a broadcast operand.
std::vector<std::size_t> broadcast_index(const Shape& full, const Shape& small) {
  if (full.size() != small.size()) {
    throw ShapeError("broadcast: rank mismatch " + shape_str(full) + " vs " +
                     shape_str(small));
  }
  std::vector<std::size_t> stride(small.size());
  std::size_t acc = 1;
  for (std::size_t i = small.size(); i-- > 0;) {
    if (small[i] != full[i] && small[i] != 1) {
      throw ShapeError("broadcast: cannot broadcast " + shape_str(small) +
                       " to " + shape_str(full));
    }
    stride[i] = small[i] == 1 ? 0 : acc;
    acc *= small[i];
  }
  std::vector<std::size_t> idx(shape_size(full));
  std::vector<std::size_t> pos(full.size(), 0);
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < full.size(); ++a) off += pos[a] * stride[a];
    idx[flat] = off;
    for (std::size_t a = full.size(); a-- > 0;) {
      if (++pos[a] < full[a]) break;
      pos[a] = 0;
    }
  }
  return idx;
}

}  // namespace

template <class T>
Var mul_broadcast(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  std::vector<std::size_t> map = broadcast_index(av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[map[i]];
  return tape.push(std::move(out), {a, b},
                   [map = std::move(map)](Tape<T>& tp, std::size_t self) {
    const std::size_t ai = tp.input(self, 0), bi = tp.input(self, 1);
    const Tensor<T>& dy = tp.grad(self);
    if (tp.requires_grad(ai)) {
      const Tensor<T>& bv = tp.value(bi);
      Tensor<T>& da = tp.grad(ai);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[map[i]];
    }
    if (tp.requires_grad(bi)) {
      const Tensor<T>& av = tp.value(ai);
      Tensor<T>& db = tp.grad(bi);
      for (std::size_t i = 0; i < dy.size(); ++i) db[map[i]] += dy[i] * av[i];
    }
  });
}

template <class T>
Var sum_axis(Tape<T>& tape, Var x, std::size_t axis) {
  const Tensor<T>& xv = tape.value(x);
  const AxisSplit s = split_at(xv.shape(), axis);
  Shape os = xv.shape();
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(os);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const T* src = xv.raw() + (o * s.extent + k) * s.inner;
      T* dst = out.raw() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  return tape.push(std::move(out), {x}, [s](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.extent; ++k) {
        T* dst = dx.raw() + (o * s.extent + k) * s.inner;
        const T* src = dy.raw() + o * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
      }
    }
  });
}

template <class T>
Var mean_axis(Tape<T>& tape, Var x, std::size_t axis) {
  const std::size_t n = tape.value(x).dim(axis);
  return scale(tape, sum_axis(tape, x, axis), T{1} / static_cast<T>(n));
}

template <class T>
Var sum_all(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  T s{};
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return tape.push(Tensor<T>({1}, std::vector<T>{s}), {x},
                   [](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const T g = tp.grad(self)[0];
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

template <class T>
Var mean_all(Tape<T>& tape, Var x) {
  const std::size_t n = tape.value(x).size();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  return scale(tape, sum_all(tape, x), T{1} / static_cast<T>(n));
}

template <class T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  return tape.push(std::move(out), {x}, [](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

namespace {

// out[j] = in[src[j]] for a permutation of axes.
std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& perm,
                                       Shape& out_shape) {
  if (perm.size() != in.size()) {
    throw ShapeError("permute: permutation length does not match rank of " +
                     shape_str(in));
  }
  std::vector<bool> seen(in.size(), false);
  for (std::size_t p : perm) {
    if (p >= in.size() || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(in.size());
  std::size_t acc = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_stride[i] = acc;
    acc *= in[i];
  }
  out_shape.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out_shape[i] = in[perm[i]];
  std::vector<std::size_t> src(acc);
  std::vector<std::size_t> pos(in.size(), 0);
  for (std::size_t flat = 0; flat < acc; ++flat) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < in.size(); ++a) off += pos[a] * in_stride[perm[a]];
    src[flat] = off;
    for (std::size_t a = in.size(); a-- > 0;) {
      if (++pos[a] < out_shape[a]) break;
      pos[a] = 0;
    }
  }
  return src;
}

}  // namespace

template <class T>
Var permute(Tape<T>& tape, Var x, std::vector<std::size_t> perm) {
  const Tensor<T>& xv = tape.value(x);
  Shape os;
  std::vector<std::size_t> src = permute_index(xv.shape(), perm, os);
  Tensor<T> out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[src[i]];
  return tape.push(std::move(out), {x},
                   [src = std::move(src)](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[src[i]] += dy[i];
  });
}

template <class T>
Var concat(Tape<T>& tape, std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  Shape os = tape.value(xs[0]).shape();
  if (axis >= os.size()) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (Var v : xs) {
    const Shape& s = tape.value(v).shape();
    if (s.size() != os.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != axis && s[a] != os[a]) {
        throw ShapeError("concat: extent mismatch " + shape_str(s) + " vs " +
                         shape_str(os) + " off axis " + std::to_string(axis));
      }
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  os[axis] = total;
  const AxisSplit s = split_at(os, axis);
  Tensor<T> out(os);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor<T>& v = tape.value(xs[k]);
    const std::size_t chunk = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(v.raw() + o * chunk, chunk,
                  out.raw() + o * total * s.inner + offset * s.inner);
    }
    offset += extents[k];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return tape.push(std::move(out), inputs,
                   [s, total, extents](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& dy = tp.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t xi = tp.input(self, k);
      const std::size_t chunk = extents[k] * s.inner;
      if (tp.requires_grad(xi)) {
        Tensor<T>& dx = tp.grad(xi);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = dy.raw() + o * total * s.inner + offset * s.inner;
          T* dst = dx.raw() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += extents[k];
    }
  });
}

template <class T>
Var slice(Tape<T>& tape, Var x, std::size_t axis, std::size_t begin,
          std::size_t end) {
  const Tensor<T>& xv = tape.value(x);
  const AxisSplit s = split_at(xv.shape(), axis);
  if (begin > end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of bounds for axis extent " +
                     std::to_string(s.extent));
  }
  Shape os = xv.shape();
  os[axis] = end - begin;
  Tensor<T> out(os);
  const std::size_t chunk = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.raw() + (o * s.extent + begin) * s.inner, chunk,
                out.raw() + o * chunk);
  }
  return tape.push(std::move(out), {x},
                   [s, begin, chunk](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = dx.raw() + (o * s.extent + begin) * s.inner;
      const T* src = dy.raw() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

template <class T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> bias) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require_rank(wv, 2, "linear weight");
  const std::size_t D = wv.dim(1), O = wv.dim(0);
  if (xv.rank() == 0 || xv.shape().back() != D) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) +
                     " does not end in " + std::to_string(D));
  }
  const std::size_t N = xv.size() / D;
  Shape os = xv.shape();
  os.back() = O;
  Tensor<T> out(os);
  MapMat<T> om(out.raw(), N, O);
  om.noalias() = CMapMat<T>(xv.raw(), N, D) * CMapMat<T>(wv.raw(), O, D).transpose();
  if (bias) {
    const Tensor<T>& bv = tape.value(*bias);
    if (bv.size() != O) throw ShapeError("linear: bias size mismatch");
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t o = 0; o < O; ++o) om(n, o) += bv[o];
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return tape.push(std::move(out), inputs,
                   [N, D, O, has_bias](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0), wi = tp.input(self, 1);
    CMapMat<T> dy(tp.grad(self).raw(), N, O);
    if (tp.requires_grad(xi)) {
      MapMat<T>(tp.grad(xi).raw(), N, D) += dy * CMapMat<T>(tp.value(wi).raw(), O, D);
    }
    if (tp.requires_grad(wi)) {
      MapMat<T>(tp.grad(wi).raw(), O, D) += dy.transpose() * CMapMat<T>(tp.value(xi).raw(), N, D);
    }
    if (has_bias) {
      const std::size_t bi = tp.input(self, 2);
      if (tp.requires_grad(bi)) {
        Tensor<T>& db = tp.grad(bi);
        for (std::size_t o = 0; o < O; ++o) db[o] += dy.col(o).sum();
      }
    }
  });
}

template <class T>
Var dropout(Tape<T>& tape, Var x, double p, bool train, std::mt19937_64& rng) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> mask(xv.shape());
  const T s = static_cast<T>(1.0 / (1.0 - p));
  // two 32-bit draws per engine call; keep when below (1-p) * 2^32
  const auto cut = static_cast<std::uint64_t>((1.0 - p) * 4294967296.0);
  for (std::size_t i = 0; i < mask.size(); i += 2) {
    const std::uint64_t r = rng();
    mask[i] = (r & 0xffffffffULL) < cut ? s : T{0};
    if (i + 1 < mask.size()) mask[i + 1] = (r >> 32) < cut ? s : T{0};
  }
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return tape.push(std::move(out), {x},
                   [mask = std::move(mask)](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <class T>
Var time_diff(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() == 0) throw ShapeError("time_diff: scalar input");
  const std::size_t Tn = xv.shape().back();
  const std::size_t rows = xv.size() / Tn;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* s = xv.raw() + r * Tn;
    T* d = out.raw() + r * Tn;
    for (std::size_t t = 1; t < Tn; ++t) d[t] = s[t] - s[t - 1];
  }
  return tape.push(std::move(out), {x}, [rows, Tn](Tape<T>& tp, std::size_t self) {
    const std::size_t xi = tp.input(self, 0);
    if (!tp.requires_grad(xi)) return;
    const Tensor<T>& dy = tp.grad(self);
    Tensor<T>& dx = tp.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = dy.raw() + r * Tn;
      T* d = dx.raw() + r * Tn;
      for (std::size_t t = 1; t < Tn; ++t) {
        d[t] += g[t];
        d[t - 1] -= g[t];
      }
    }
  });
}

template <class T>
Var stop_gradient(Tape<T>& tape, Var x) {
  return tape.constant(tape.value(x));
}

#define FREQDYN_INSTANTIATE_OPS(T)                                              \
  template void accumulate<T>(Tape<T>&, std::size_t, const Tensor<T>&);         \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&,      \
                                       const Tensor<T>*, const Conv2dOptions&); \
  template Var conv2d<T>(Tape<T>&, Var, Var, std::optional<Var>,                \
                         const Conv2dOptions&);                                 \
  template Var pool2d<T>(Tape<T>&, Var, PoolMode, FreqTime);                    \
  template Var batch_norm<T>(Tape<T>&, Var, Var, Var, BatchNormState<T>&, bool, \
                             double, double);                                   \
  template Var relu<T>(Tape<T>&, Var);                                          \
  template Var sigmoid<T>(Tape<T>&, Var);                                       \
  template Var tanh<T>(Tape<T>&, Var);                                          \
  template Var softmax<T>(Tape<T>&, Var, std::size_t);                          \
  template Var add<T>(Tape<T>&, Var, Var);                                      \
  template Var sub<T>(Tape<T>&, Var, Var);                                      \
  template Var mul<T>(Tape<T>&, Var, Var);                                      \
  template Var scale<T>(Tape<T>&, Var, T);                                      \
  template Var mul_broadcast<T>(Tape<T>&, Var, Var);                            \
  template Var sum_axis<T>(Tape<T>&, Var, std::size_t);                         \
  template Var mean_axis<T>(Tape<T>&, Var, std::size_t);                        \
  template Var sum_all<T>(Tape<T>&, Var);                                       \
  template Var mean_all<T>(Tape<T>&, Var);                                      \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                \
  template Var permute<T>(Tape<T>&, Var, std::vector<std::size_t>);             \
  template Var concat<T>(Tape<T>&, std::span<const Var>, std::size_t);          \
  template Var slice<T>(Tape<T>&, Var, std::size_t, std::size_t, std::size_t); \
  template Var linear<T>(Tape<T>&, Var, Var, std::optional<Var>);               \
  template Var dropout<T>(Tape<T>&, Var, double, bool, std::mt19937_64&);       \
  template Var time_diff<T>(Tape<T>&, Var);                                     \
  template Var stop_gradient<T>(Tape<T>&, Var);

FREQDYN_INSTANTIATE_OPS(float)
FREQDYN_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace freqdyn

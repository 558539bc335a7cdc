// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/numerics/gru.hpp"

#include <Eigen/Core>
#include <cmath>

#include "freqdyn/numerics/ops.hpp"

namespace freqdyn::ops {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

template <class T>
T sigm(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

}  // namespace

template <class T>
Var gru(Tape<T>& tape, Var x, const GruDirection& w, bool reverse) {
  const Tensor<T>& xv = tape.value(x);
  require_rank(xv, 3, "gru input");
  const std::size_t B = xv.dim(0), Tn = xv.dim(1), D = xv.dim(2);
  const Tensor<T>& wih = tape.value(w.w_ih);
  const Tensor<T>& whh = tape.value(w.w_hh);
  require_rank(wih, 2, "gru w_ih");
  const std::size_t H = whh.dim(1);
  require_shape(wih, {3 * H, D}, "gru w_ih");
  require_shape(whh, {3 * H, H}, "gru w_hh");
  require_shape(tape.value(w.b_ih), {3 * H}, "gru b_ih");
  require_shape(tape.value(w.b_hh), {3 * H}, "gru b_hh");
  if (Tn == 0) throw ShapeError("gru: empty sequence");

  // Input projections for all frames at once: (B*T) x 3H.
  RowMat<T> gi = CMap<T>(xv.raw(), B * Tn, D) * CMap<T>(wih.raw(), 3 * H, D).transpose();
  const Tensor<T>& bih = tape.value(w.b_ih);
  const Tensor<T>& bhh = tape.value(w.b_hh);
  for (std::size_t r = 0; r < B * Tn; ++r) {
    for (std::size_t k = 0; k < 3 * H; ++k) gi(r, k) += bih[k];
  }

  // Per step saved state, indexed by processing step s (not frame).
  // gates: B x 3H holding r, z, n; ghn: B x H; hprev: B x H.
  std::vector<T> gates(Tn * B * 3 * H), ghn(Tn * B * H), hprev(Tn * B * H);
  Tensor<T> out({B, Tn, H});
  RowMat<T> h = RowMat<T>::Zero(B, H);
  RowMat<T> gh(B, 3 * H);
  CMap<T> whm(whh.raw(), 3 * H, H);
  for (std::size_t s = 0; s < Tn; ++s) {
    const std::size_t t = reverse ? Tn - 1 - s : s;
    gh.noalias() = h * whm.transpose();
    std::copy_n(h.data(), B * H, hprev.data() + s * B * H);
    for (std::size_t b = 0; b < B; ++b) {
      const T* gib = &gi(b * Tn + t, 0);
      T* g = gates.data() + (s * B + b) * 3 * H;
      T* hn = ghn.data() + (s * B + b) * H;
      for (std::size_t k = 0; k < H; ++k) {
        const T r = sigm(gib[k] + gh(b, k) + bhh[k]);
        const T z = sigm(gib[H + k] + gh(b, H + k) + bhh[H + k]);
        const T hnk = gh(b, 2 * H + k) + bhh[2 * H + k];
        const T n = std::tanh(gib[2 * H + k] + r * hnk);
        g[k] = r;
        g[H + k] = z;
        g[2 * H + k] = n;
        hn[k] = hnk;
        h(b, k) = (T{1} - z) * n + z * h(b, k);
      }
      std::copy_n(&h(b, 0), H, out.raw() + (b * Tn + t) * H);
    }
  }

  return tape.push(
      std::move(out), {x, w.w_ih, w.w_hh, w.b_ih, w.b_hh},
      [B, Tn, D, H, reverse, gates = std::move(gates), ghn = std::move(ghn),
       hprev = std::move(hprev)](Tape<T>& tp, std::size_t self) {
        const std::size_t xi = tp.input(self, 0), wii = tp.input(self, 1),
                          whi = tp.input(self, 2), bii = tp.input(self, 3),
                          bhi = tp.input(self, 4);
        const Tensor<T>& dy = tp.grad(self);
        CMap<T> whm(tp.value(whi).raw(), 3 * H, H);
        RowMat<T> dgi(B * Tn, 3 * H);
        RowMat<T> dgh(B, 3 * H);
        RowMat<T> dwhh = RowMat<T>::Zero(3 * H, H);
        std::vector<T> dbhh(3 * H, T{0});
        RowMat<T> dh = RowMat<T>::Zero(B, H);
        for (std::size_t s = Tn; s-- > 0;) {
          const std::size_t t = reverse ? Tn - 1 - s : s;
          CMap<T> hp(hprev.data() + s * B * H, B, H);
          RowMat<T> dh_prev(B, H);
          for (std::size_t b = 0; b < B; ++b) {
            const T* g = gates.data() + (s * B + b) * 3 * H;
            const T* hn = ghn.data() + (s * B + b) * H;
            const T* dyt = dy.raw() + (b * Tn + t) * H;
            for (std::size_t k = 0; k < H; ++k) {
              const T r = g[k], z = g[H + k], n = g[2 * H + k];
              const T dht = dyt[k] + dh(b, k);
              const T dn = dht * (T{1} - z);
              const T dz = dht * (hp(b, k) - n);
              dh_prev(b, k) = dht * z;
              const T dn_pre = dn * (T{1} - n * n);
              const T dr_pre = dn_pre * hn[k] * r * (T{1} - r);
              const T dz_pre = dz * z * (T{1} - z);
              dgi(b * Tn + t, k) = dr_pre;
              dgi(b * Tn + t, H + k) = dz_pre;
              dgi(b * Tn + t, 2 * H + k) = dn_pre;
              dgh(b, k) = dr_pre;
              dgh(b, H + k) = dz_pre;
              dgh(b, 2 * H + k) = dn_pre * r;
            }
          }
          dh_prev.noalias() += dgh * whm;
          dwhh.noalias() += dgh.transpose() * hp;
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < 3 * H; ++k) dbhh[k] += dgh(b, k);
          }
          dh = std::move(dh_prev);
        }
        if (tp.requires_grad(xi)) {
          Map<T>(tp.grad(xi).raw(), B * Tn, D) +=
              dgi * CMap<T>(tp.value(wii).raw(), 3 * H, D);
        }
        if (tp.requires_grad(wii)) {
          Map<T>(tp.grad(wii).raw(), 3 * H, D) +=
              dgi.transpose() * CMap<T>(tp.value(xi).raw(), B * Tn, D);
        }
        if (tp.requires_grad(whi)) Map<T>(tp.grad(whi).raw(), 3 * H, H) += dwhh;
        if (tp.requires_grad(bii)) {
          Tensor<T>& db = tp.grad(bii);
          for (std::size_t k = 0; k < 3 * H; ++k) db[k] += dgi.col(k).sum();
        }
        if (tp.requires_grad(bhi)) {
          Tensor<T>& db = tp.grad(bhi);
          for (std::size_t k = 0; k < 3 * H; ++k) db[k] += dbhh[k];
        }
      });
}

template <class T>
Var bigru(Tape<T>& tape, Var x,
          const std::vector<std::pair<GruDirection, GruDirection>>& layers) {
  Var h = x;
  for (const auto& [fwd, bwd] : layers) {
    const Var parts[2] = {gru(tape, h, fwd, false), gru(tape, h, bwd, true)};
    h = concat<T>(tape, parts, 2);
  }
  return h;
}

template Var gru<float>(Tape<float>&, Var, const GruDirection&, bool);
template Var gru<double>(Tape<double>&, Var, const GruDirection&, bool);
template Var bigru<float>(Tape<float>&, Var,
                          const std::vector<std::pair<GruDirection, GruDirection>>&);
template Var bigru<double>(Tape<double>&, Var,
                           const std::vector<std::pair<GruDirection, GruDirection>>&);

}  // namespace freqdyn::ops

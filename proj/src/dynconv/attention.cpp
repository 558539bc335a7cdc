// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/dynconv/attention.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace freqdyn::nn {
namespace {

ops::Conv2dOptions freq_only() {
  return {};  // same padding; a k x 1 kernel only pads frequency
}

// x (B x C x F x T) -> sum_t softmax_t(path(src))_t * x_t, as B x C x F x 1.
template <class T>
Var attend(const Context<T>& ctx, const TapPool::Path& path, Var src, Var x) {
  auto& tp = ctx.tape;
  Var h = ops::relu(tp, path.bn.forward(ctx, path.conv1.forward(ctx, src)));
  Var logits = path.conv2.forward(ctx, h);
  Var w = ops::softmax(tp, logits, 3);
  Shape s = tp.shape(x);
  s[3] = 1;
  return ops::reshape(tp, ops::sum_axis(tp, ops::mul(tp, w, x), 3), s);
}

}  // namespace

std::size_t attention_hidden(std::size_t channels, const AttentionSpec& spec) {
  return std::max(channels / std::max<std::size_t>(spec.squeeze_ratio, 1), spec.K);
}

template <class T>
TapPool TapPool::create(ParamStore<T>& store, const std::string& name, std::size_t channels,
                        TapTerms terms, std::mt19937_64& rng) {
  if (!terms.any()) throw std::invalid_argument(name + ": temporal attention pooling needs at least one term");
  auto make_path = [&](const std::string& p) {
    Path path;
    path.conv1 = Conv::create(store, p + ".conv1", channels, channels, {3, 1}, true, rng, freq_only());
    path.bn = BatchNorm::create(store, p + ".bn", channels);
    path.conv2 = Conv::create(store, p + ".conv2", channels, channels, {1, 1}, true, rng);
    return path;
  };
  if (!terms.any()) throw std::invalid_argument(name + ": TAP needs at least one of TA, VA, AP");
  TapPool tp;
  if (terms.ta) tp.ta = make_path(name + ".ta");
  if (terms.va) tp.va = make_path(name + ".va");
  tp.ap = terms.ap;
  return tp;
}

template <class T>
Var TapPool::forward(const Context<T>& ctx, Var x) const {
  auto& tp = ctx.tape;
  std::vector<Var> terms;
  if (ta) terms.push_back(attend(ctx, *ta, x, x));
  if (va) terms.push_back(attend(ctx, *va, ops::time_diff(tp, x), x));
  if (ap) {
    Shape s = tp.shape(x);
    s[3] = 1;
    terms.push_back(ops::reshape(tp, ops::mean_axis(tp, x, 3), s));
  }
  if (terms.empty()) throw std::logic_error("TapPool: no terms enabled");
  Var out = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out = ops::add(tp, out, terms[i]);
  return out;
}

template <class T>
FreqAttention FreqAttention::create(ParamStore<T>& store, const std::string& name,
                                    std::size_t channels, const AttentionSpec& spec,
                                    std::mt19937_64& rng) {
  if (spec.K < 1) throw std::invalid_argument(name + ": K must be >= 1");
  if (channels < 1) throw std::invalid_argument(name + ": attention needs C >= 1");
  if (!(spec.temperature > 0)) throw std::invalid_argument(name + ": temperature must be positive");
  if (spec.squeeze_kernel % 2 == 0) throw std::invalid_argument(name + ": squeeze kernel must be odd");
  FreqAttention a;
  a.spec = spec;
  if (spec.pooling == TimePooling::tap) a.tap = TapPool::create(store, name + ".tap", channels, spec.tap, rng);
  const std::size_t hidden = attention_hidden(channels, spec);
  a.squeeze = Conv::create(store, name + ".squeeze", channels, hidden, {spec.squeeze_kernel, 1}, false, rng);
  a.bn = BatchNorm::create(store, name + ".bn", hidden);
  a.excite = Conv::create(store, name + ".excite", hidden, spec.K, {1, 1}, true, rng);
  return a;
}

template <class T>
Var FreqAttention::pool(const Context<T>& ctx, Var x) const {
  if (tap) return tap->forward(ctx, x);
  Shape s = ctx.tape.shape(x);
  s[3] = 1;
  return ops::reshape(ctx.tape, ops::mean_axis(ctx.tape, x, 3), s);
}

template <class T>
Var FreqAttention::forward(const Context<T>& ctx, Var x) const {
  auto& tp = ctx.tape;
  Var h = ops::relu(tp, bn.forward(ctx, squeeze.forward(ctx, pool(ctx, x))));
  Var logits = excite.forward(ctx, h);
  if (spec.temperature != 1.0) logits = ops::scale(tp, logits, static_cast<T>(1.0 / spec.temperature));
  return ops::softmax(tp, logits, 1);
}

#define FREQDYN_INSTANTIATE_ATTENTION(T)                                                         \
  template TapPool TapPool::create<T>(ParamStore<T>&, const std::string&, std::size_t, TapTerms, \
                                      std::mt19937_64&);                                         \
  template Var TapPool::forward<T>(const Context<T>&, Var) const;                                \
  template FreqAttention FreqAttention::create<T>(ParamStore<T>&, const std::string&,            \
                                                  std::size_t, const AttentionSpec&,             \
                                                  std::mt19937_64&);                             \
  template Var FreqAttention::pool<T>(const Context<T>&, Var) const;                             \
  template Var FreqAttention::forward<T>(const Context<T>&, Var) const;

FREQDYN_INSTANTIATE_ATTENTION(float)
FREQDYN_INSTANTIATE_ATTENTION(double)

}  // namespace freqdyn::nn

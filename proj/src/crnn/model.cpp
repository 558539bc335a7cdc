// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/crnn/model.hpp"

#include <cmath>
#include <cstring>

#include "freqdyn/common/rng.hpp"
#include "freqdyn/numerics/gru.hpp"

namespace freqdyn::crnn {

template <class T>
Model<T> Model<T>::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  auto rng = substream(seed, "model.init");
  std::size_t cin = 1;
  if (cfg.pre_conv) {
    m.pre_conv_ = nn::Conv::create(m.store_, "pre.conv", 1, cfg.pre_conv_channels, {3, 3}, true, rng);
    m.pre_bn_ = nn::BatchNorm::create(m.store_, "pre.bn", cfg.pre_conv_channels);
    cin = cfg.pre_conv_channels;
  }
  for (std::size_t l = 1; l <= cfg.layers(); ++l) {
    const std::string name = "conv" + std::to_string(l);
    nn::ConvLayer layer;
    try {
      layer = nn::ConvLayer::create(m.store_, name, l, cin, cfg.channels[l - 1], cfg.branches(l), rng);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const std::size_t c = layer.out_channels;
    m.layers_.push_back(std::move(layer));
    m.bns_.push_back(nn::BatchNorm::create(m.store_, name + ".bn", c));
    if (cfg.activation == Activation::cg) {
      m.gates_.push_back(nn::Conv::create(m.store_, name + ".gate", c, c, {1, 1}, true, rng));
    } else {
      m.gates_.push_back(std::nullopt);
    }
    cin = c;
  }
  const std::size_t H = cfg.gru_hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(H));
  std::size_t d = cin * cfg.freq_out();
  for (std::size_t l = 0; l < cfg.gru_layers; ++l) {
    auto dir = [&](const std::string& n) {
      GruWeights w;
      w.w_ih = m.store_.add(n + ".w_ih", uniform_init<T>({3 * H, d}, bound, rng));
      w.w_hh = m.store_.add(n + ".w_hh", uniform_init<T>({3 * H, H}, bound, rng));
      w.b_ih = m.store_.add(n + ".b_ih", uniform_init<T>({3 * H}, bound, rng));
      w.b_hh = m.store_.add(n + ".b_hh", uniform_init<T>({3 * H}, bound, rng));
      return w;
    };
    const std::string n = "gru" + std::to_string(l + 1);
    GruWeights f = dir(n + ".fwd");
    GruWeights b = dir(n + ".bwd");
    m.gru_.emplace_back(f, b);
    d = 2 * H;
  }
  const double hb = 1.0 / std::sqrt(static_cast<double>(d));
  m.strong_w_ = m.store_.add("head.strong.weight", uniform_init<T>({cfg.n_classes, d}, hb, rng));
  m.strong_b_ = m.store_.add("head.strong.bias", Tensor<T>({cfg.n_classes}));
  m.att_w_ = m.store_.add("head.attention.weight", uniform_init<T>({cfg.n_classes, d}, hb, rng));
  m.att_b_ = m.store_.add("head.attention.bias", Tensor<T>({cfg.n_classes}));
  return m;
}

template <class T>
Outputs Model<T>::forward(const nn::Context<T>& ctx, Var mel) const {
  auto& tp = ctx.tape;
  const Shape& s = tp.shape(mel);
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.n_mels) {
    throw ShapeError("model input must be B x 1 x " + std::to_string(cfg_.n_mels) + " x T, got " + shape_str(s));
  }
  if (s[3] == 0 || s[3] % cfg_.time_pool() != 0) {
    throw ShapeError("model input has " + std::to_string(s[3]) + " frames, not divisible by the time pooling " +
                     std::to_string(cfg_.time_pool()) + " (crop with truncate_frames)");
  }
  if (ctx.train && cfg_.dropout > 0 && !ctx.rng) throw std::logic_error("training forward needs an RNG");

  Var x = mel;
  if (pre_conv_) x = ops::relu(tp, pre_bn_->forward(ctx, pre_conv_->forward(ctx, x)));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = bns_[i].forward(ctx, layers_[i].forward(ctx, x));
    if (gates_[i]) {
      x = ops::mul(tp, x, ops::sigmoid(tp, gates_[i]->forward(ctx, x)));
    } else {
      x = ops::relu(tp, x);
    }
    if (ctx.train && cfg_.dropout > 0) x = ops::dropout(tp, x, cfg_.dropout, true, *ctx.rng);
    x = ops::pool2d(tp, x, ops::PoolMode::max, cfg_.pools[i]);
  }
  // B x C x F x T -> B x T x (C F)
  const Shape cs = tp.shape(x);  // copy: permute grows the tape
  x = ops::permute(tp, x, {0, 3, 1, 2});
  x = ops::reshape(tp, x, {cs[0], cs[3], cs[1] * cs[2]});

  std::vector<std::pair<ops::GruDirection, ops::GruDirection>> layers;
  for (const auto& [f, b] : gru_) {
    auto dir = [&](const GruWeights& w) {
      return ops::GruDirection{ctx.param(w.w_ih), ctx.param(w.w_hh), ctx.param(w.b_ih), ctx.param(w.b_hh)};
    };
    layers.emplace_back(dir(f), dir(b));
  }
  Var h = ops::bigru(tp, x, layers);

  Var strong = ops::sigmoid(tp, ops::linear(tp, h, ctx.param(strong_w_), ctx.param(strong_b_)));
  Var att = ops::softmax(tp, ops::linear(tp, h, ctx.param(att_w_), ctx.param(att_b_)), 1);
  Var weak = ops::sum_axis(tp, ops::mul(tp, att, strong), 1);
  return {strong, weak};
}

template <class T>
Predictions<T> Model<T>::predict(const Tensor<T>& mel, nn::AttentionRecorder<T>* recorder) {
  Tape<T> tape(false);
  const auto vars = store_.bind(tape, false);
  nn::Context<T> ctx{tape, vars, store_, false, nullptr, recorder};
  const Outputs out = forward(ctx, tape.constant(mel));
  return {tape.value(out.strong), tape.value(out.weak)};
}

std::size_t usable_frames(std::size_t frames, std::size_t pool) {
  return pool == 0 ? frames : frames - frames % pool;
}

template <class T>
Tensor<T> truncate_frames(const Tensor<T>& mel, std::size_t pool) {
  const std::size_t T0 = mel.shape().back();
  const std::size_t T1 = usable_frames(T0, pool);
  if (T1 == T0) return mel;
  if (T1 == 0) throw ShapeError("truncate_frames: fewer frames than the time pooling");
  Shape s = mel.shape();
  s.back() = T1;
  Tensor<T> out(s);
  const std::size_t rows = mel.size() / T0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(out.raw() + r * T1, mel.raw() + r * T0, T1 * sizeof(T));
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template Tensor<float> truncate_frames<float>(const Tensor<float>&, std::size_t);
template Tensor<double> truncate_frames<double>(const Tensor<double>&, std::size_t);

}  // namespace freqdyn::crnn

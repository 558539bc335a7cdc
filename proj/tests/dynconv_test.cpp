// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "freqdyn/common/rng.hpp"
#include "freqdyn/crnn/config.hpp"
#include "freqdyn/dynconv/dynconv.hpp"
#include "freqdyn/numerics/ops.hpp"
#include "oracles.hpp"

using namespace freqdyn;
using freqdyn::testing::max_abs_diff;
using freqdyn::testing::random_tensor;
using namespace freqdyn::testing;

namespace {


// brute-force dilated same-padded cross-correlation, one kernel
Tensor<double> direct_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                           std::size_t df, std::size_t dt) {
  const std::size_t B = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3), O = w.dim(0);
  const std::ptrdiff_t pf = std::ptrdiff_t(df), pt = std::ptrdiff_t(dt);
  Tensor<double> y({B, O, F, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < T; ++t) {
          double s = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < 3; ++i)
              for (std::size_t j = 0; j < 3; ++j) {
                const std::ptrdiff_t fi = std::ptrdiff_t(f + i * df) - pf;
                const std::ptrdiff_t tj = std::ptrdiff_t(t + j * dt) - pt;
                if (fi < 0 || tj < 0 || fi >= std::ptrdiff_t(F) || tj >= std::ptrdiff_t(T)) continue;
                s += w.at(o, c, i, j) * x.at(b, c, fi, tj);
              }
          y.at(b, o, f, t) = s;
        }
  return y;
}


}  // namespace

TEST(FdyForward, NaiveMatchesEfficientOnRandomCases) {
  for (int c = 0; c < 10; ++c) {
    const std::size_t K = c % 2 ? 4 : 2;
    const std::size_t B = 1 + c % 2, cin = 2 + c % 3, cout = 3, F = 5 + c, T = 4 + c % 4;
    const auto x = random_tensor<float>({B, cin, F, T}, 100 + c);
    const auto ks = random_kernels<float>(K, cout, cin, c % 3 != 0, 200 + 17 * c);
    const auto pi = random_pi<float>(B, K, F, 300 + c);
    const auto naive = nn::fdy_forward(x, ks, pi, nn::FdyMode::naive);
    const auto eff = nn::fdy_forward(x, ks, pi, nn::FdyMode::efficient);
    ASSERT_EQ(naive.shape(), eff.shape());
    EXPECT_LT(max_abs_diff(naive, eff), 1e-5) << "case " << c;
  }
}

TEST(FdyForward, EqualityHoldsOnPaddingEdgesInDouble) {
  // first and last frequency rows read zero padding; pi differs per row
  const auto x = random_tensor({2, 3, 6, 5}, 1);
  const auto ks = random_kernels<double>(4, 2, 3, true, 2);
  const auto pi = random_pi<double>(2, 4, 6, 3);
  const auto naive = nn::fdy_forward(x, ks, pi, nn::FdyMode::naive);
  const auto eff = nn::fdy_forward(x, ks, pi, nn::FdyMode::efficient);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t f : {std::size_t{0}, std::size_t{5}})
        for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(naive.at(b, o, f, t), eff.at(b, o, f, t), 1e-13);
}

TEST(FdyForward, OneHotAttentionSelectsFirstKernel) {
  const auto x = random_tensor({1, 2, 7, 6}, 5);
  const auto ks = random_kernels<double>(2, 3, 2, true, 6);
  Tensor<double> pi({1, 2, 7, 1});
  for (std::size_t f = 0; f < 7; ++f) pi.at(0, 0, f, 0) = 1.0;
  const auto want = direct_conv(x, ks.weights[0], &ks.biases[0], 1, 1);
  for (auto mode : {nn::FdyMode::naive, nn::FdyMode::efficient}) {
    EXPECT_LT(max_abs_diff(nn::fdy_forward(x, ks, pi, mode), want), 1e-12);
  }
}

TEST(FdyForward, MatchesPerRowKernelSumOracle) {
  // y[:, :, f] = conv(x, sum_k pi_k(f) W_k)[:, :, f] + sum_k pi_k(f) b_k
  const auto x = random_tensor({2, 2, 5, 4}, 7);
  const auto ks = random_kernels<double>(3, 2, 2, true, 8);
  const auto pi = random_pi<double>(2, 3, 5, 9);
  const auto y = nn::fdy_forward(x, ks, pi, nn::FdyMode::efficient);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t f = 0; f < 5; ++f) {
      Tensor<double> w({2, 2, 3, 3}), bias({2});
      for (std::size_t k = 0; k < 3; ++k) {
        const double p = pi.at(b, k, f, 0);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += p * ks.weights[k][i];
        for (std::size_t i = 0; i < 2; ++i) bias[i] += p * ks.biases[k][i];
      }
      const auto full = direct_conv(x, w, &bias, 1, 1);
      for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(y.at(b, o, f, t), full.at(b, o, f, t), 1e-12);
    }
}

TEST(FdyForward, RejectsDilatedKernels) {
  auto ks = random_kernels<double>(2, 2, 2, false, 1);
  ks.dilations[1] = {2, 1};
  EXPECT_THROW(nn::fdy_forward(random_tensor({1, 2, 5, 4}, 1), ks, random_pi<double>(1, 2, 5, 1),
                               nn::FdyMode::naive),
               std::invalid_argument);
}

TEST(DfdForward, MatchesPerKernelDilatedOracle) {
  const auto x = random_tensor({2, 2, 9, 5}, 11);
  auto ks = random_kernels<double>(4, 3, 2, true, 12);
  ks.dilations = {{1, 1}, {2, 1}, {3, 1}, {3, 1}};
  const auto pi = random_pi<double>(2, 4, 9, 13);
  const auto y = nn::dfd_forward(x, ks, pi);
  Tensor<double> want({2, 3, 9, 5});
  for (std::size_t k = 0; k < 4; ++k) {
    const auto yk = direct_conv(x, ks.weights[k], &ks.biases[k], ks.dilations[k].freq, 1);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t f = 0; f < 9; ++f)
          for (std::size_t t = 0; t < 5; ++t) want.at(b, o, f, t) += pi.at(b, k, f, 0) * yk.at(b, o, f, t);
  }
  EXPECT_LT(max_abs_diff(y, want), 1e-12);
}

TEST(DfdForward, ImpulseResponseTapsAtDilatedOffsets) {
  Tensor<double> x({1, 1, 9, 3});
  x.at(0, 0, 4, 1) = 1.0;
  nn::BasisKernelSet<double> ks;
  ks.weights.push_back(Tensor<double>({1, 1, 3, 3}, 1.0));
  ks.dilations.push_back({2, 1});
  Tensor<double> pi({1, 1, 9, 1}, 1.0);
  const auto y = nn::dfd_forward(x, ks, pi);
  for (std::size_t f = 0; f < 9; ++f) {
    const bool tap = f == 2 || f == 4 || f == 6;
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(y.at(0, 0, f, t), tap ? 1.0 : 0.0) << f << "," << t;
  }
}

TEST(Attention, WeightsLieOnTheSimplex) {
  for (auto pooling : {nn::TimePooling::avg, nn::TimePooling::tap}) {
    ParamStore<double> store;
    nn::AttentionSpec spec;
    spec.K = 4;
    spec.pooling = pooling;
    auto rng = substream(1, "att");
    const auto att = nn::FreqAttention::create(store, "att", 8, spec, rng);
    for (bool train : {true, false}) {
      Tape<double> tape(false);
      const auto vars = store.bind(tape, false);
      nn::Context<double> ctx{tape, vars, store, train, &rng, nullptr};
      const auto pi = tape.value(att.forward(ctx, tape.constant(random_tensor({3, 8, 6, 7}, 2, -3, 3))));
      ASSERT_EQ(pi.shape(), (Shape{3, 4, 6, 1}));
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t f = 0; f < 6; ++f) {
          double s = 0;
          for (std::size_t k = 0; k < 4; ++k) {
            EXPECT_GT(pi.at(b, k, f, 0), 0.0);
            s += pi.at(b, k, f, 0);
          }
          EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
  }
}

TEST(Attention, HighTemperatureFlattensWeights) {
  ParamStore<double> store;
  nn::AttentionSpec spec;
  spec.temperature = 1e6;
  auto rng = substream(2, "att");
  const auto att = nn::FreqAttention::create(store, "att", 8, spec, rng);
  Tape<double> tape(false);
  const auto vars = store.bind(tape, false);
  nn::Context<double> ctx{tape, vars, store, true, &rng, nullptr};
  const auto pi = tape.value(att.forward(ctx, tape.constant(random_tensor({2, 8, 5, 4}, 3))));
  for (double v : pi.data()) EXPECT_NEAR(v, 0.25, 1e-5);
}

TEST(Attention, SqueezeWidthIsQuarterOrK) {
  nn::AttentionSpec spec;
  spec.K = 4;
  EXPECT_EQ(nn::attention_hidden(256, spec), 64u);
  EXPECT_EQ(nn::attention_hidden(8, spec), 4u);
  spec.K = 6;
  EXPECT_EQ(nn::attention_hidden(16, spec), 6u);
}

TEST(TapPool, AverageOnlyIsTheTimeMean) {
  ParamStore<double> store;
  auto rng = substream(3, "tap");
  const auto tap = nn::TapPool::create(store, "tap", 4, nn::TapTerms{false, false, true}, rng);
  EXPECT_EQ(store.size(), 0u);
  const auto x = random_tensor({2, 4, 3, 6}, 4);
  Tape<double> tape(false);
  const auto vars = store.bind(tape, false);
  nn::Context<double> ctx{tape, vars, store, true, &rng, nullptr};
  const auto y = tape.value(tap.forward(ctx, tape.constant(x)));
  ASSERT_EQ(y.shape(), (Shape{2, 4, 3, 1}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t f = 0; f < 3; ++f) {
        double m = 0;
        for (std::size_t t = 0; t < 6; ++t) m += x.at(b, c, f, t) / 6.0;
        EXPECT_NEAR(y.at(b, c, f, 0), m, 1e-14);
      }
}

TEST(TapPool, StationaryInputGivesThreeTimesTheFrame) {
  // constant frames: TA and VA weights are uniform over time and weight x_t,
  // AP is the frame itself
  ParamStore<double> store;
  auto rng = substream(4, "tap");
  const auto tap = nn::TapPool::create(store, "tap", 3, nn::TapTerms{true, true, true}, rng);
  double phase = 1.0;
  for (auto& p : store.params())
    for (auto& v : p.value.data()) v = 0.3 * std::sin(phase += 1.0);
  Tensor<double> x({2, 3, 4, 5});
  const auto frame = random_tensor({2, 3, 4}, 5);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t f = 0; f < 4; ++f)
        for (std::size_t t = 0; t < 5; ++t) x.at(b, c, f, t) = frame.at(b, c, f);
  Tape<double> tape(false);
  const auto vars = store.bind(tape, false);
  nn::Context<double> ctx{tape, vars, store, true, &rng, nullptr};
  const auto y = tape.value(tap.forward(ctx, tape.constant(x)));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t f = 0; f < 4; ++f) EXPECT_NEAR(y.at(b, c, f, 0), 3.0 * frame.at(b, c, f), 1e-12);
}

TEST(TapPool, TimeDiffFirstFrameIsZero) {
  const auto x = random_tensor({1, 2, 3, 4}, 6);
  Tape<double> tape(false);
  const auto d = tape.value(ops::time_diff(tape, tape.constant(x)));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < 3; ++f) {
      EXPECT_EQ(d.at(0, c, f, 0), 0.0);
      for (std::size_t t = 1; t < 4; ++t) EXPECT_EQ(d.at(0, c, f, t), x.at(0, c, f, t) - x.at(0, c, f, t - 1));
    }
}

// Each variant reduced to plain FDY, built from ModelConfig so the real
// configuration path is exercised, with identical initialization.
TEST(ReductionChain, AllVariantsCollapseToFdy) {
  const std::size_t cin = 8, cout = 8, layer = 3;
  crnn::ModelConfig fdy;
  const auto cases = reduction_cases(fdy);
  const auto x = random_tensor({2, cin, 16, 20}, 77);
  for (bool train : {true, false}) {
    // fresh stores each mode: train passes move the BN running statistics
    BuiltLayer ref = build_layer(fdy.branches(layer), cin, cout);
    ASSERT_TRUE(ref.layer.is_dynamic());
    const auto want = run_layer(ref.layer, ref.store, x, train);
    for (const auto& c : cases) {
      BuiltLayer b = build_layer(c.cfg.branches(layer), cin, cout);
      ASSERT_EQ(b.store.scalar_count(), ref.store.scalar_count()) << c.name;
      EXPECT_LT(max_abs_diff(run_layer(b.layer, b.store, x, train), want), 1e-5)
          << c.name << (train ? " train" : " eval");
    }
  }
}

TEST(ConvLayer, PfdPutsDynamicChannelsFirst) {
  nn::BranchSpec dyn;
  dyn.fraction = {1, 4};
  nn::BranchSpec stat;
  stat.kind = nn::BranchKind::static_conv;
  stat.fraction = {3, 4};
  BuiltLayer b = build_layer({dyn, stat}, 4, 8);
  ASSERT_EQ(b.layer.dynamic[0].out_channels, 2u);
  ASSERT_EQ(b.layer.static_channels, 6u);
  // silence the static branch: its channels must become exactly zero
  for (auto& p : b.store.params())
    if (p.name.find(".static.") != std::string::npos) p.value.fill(0.0);
  const auto y = run_layer(b.layer, b.store, random_tensor({1, 4, 6, 5}, 8), false);
  double dyn_energy = 0;
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t f = 0; f < 6; ++f)
      for (std::size_t t = 0; t < 5; ++t) {
        if (c >= 2) {
          EXPECT_EQ(y.at(0, c, f, t), 0.0);
        } else {
          dyn_energy += std::abs(y.at(0, c, f, t));
        }
      }
  EXPECT_GT(dyn_energy, 0.0);
}

TEST(ConvLayer, MdfdBranchesHaveIndependentAttention) {
  crnn::ModelConfig c = crnn::preset("mdfd");
  const auto br = c.branches(3);
  std::size_t dyn = 0;
  for (const auto& s : br) dyn += s.kind == nn::BranchKind::dynamic;
  ParamStore<double> store;
  auto rng = substream(9, "mdfd");
  nn::ConvLayer::create(store, "l", 3, 64, 128, br, rng);
  std::size_t excite = 0;
  for (const auto& p : store.params()) excite += p.name.ends_with(".att.excite.weight");
  EXPECT_EQ(excite, dyn);
  EXPECT_GE(dyn, 2u);
}

TEST(Fraction, ParseAndIntegrality) {
  EXPECT_EQ(nn::Fraction::parse("1/8"), (nn::Fraction{1, 8}));
  EXPECT_EQ(nn::Fraction::parse("11/8"), (nn::Fraction{11, 8}));
  EXPECT_EQ(nn::Fraction::parse("2/16"), (nn::Fraction{1, 8}));
  EXPECT_EQ(nn::fraction_of(256, {1, 8}, "x"), 32u);
  EXPECT_THROW(nn::fraction_of(4, {1, 8}, "x"), std::invalid_argument);
  EXPECT_THROW(nn::Fraction::parse("1/0"), std::invalid_argument);
  EXPECT_THROW(nn::Fraction::parse("abc"), std::invalid_argument);
}

namespace {

Tensor<double> run_attention(const nn::FreqAttention& att, ParamStore<double>& store, const Tensor<double>& x,
                             bool train = true) {
  Tape<double> tape(false);
  const auto vars = store.bind(tape, false);
  std::mt19937_64 rng(0);
  nn::Context<double> ctx{tape, vars, store, train, &rng, nullptr};
  return tape.value(att.forward(ctx, tape.constant(x)));
}

Tensor<double> run_tap(const nn::TapPool& tap, ParamStore<double>& store, const Tensor<double>& x) {
  Tape<double> tape(false);
  const auto vars = store.bind(tape, false);
  std::mt19937_64 rng(0);
  nn::Context<double> ctx{tape, vars, store, true, &rng, nullptr};
  return tape.value(tap.forward(ctx, tape.constant(x)));
}

Tensor<double> constant_in_time(std::size_t B, std::size_t C, std::size_t F, std::size_t T, std::uint64_t seed) {
  const auto frame = random_tensor({B, C, F}, seed);
  Tensor<double> x({B, C, F, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < T; ++t) x.at(b, c, f, t) = frame.at(b, c, f);
  return x;
}

void randomize(ParamStore<double>& store, std::uint64_t seed) {
  auto rng = substream(seed, "dynconv_test.randomize");
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (auto& p : store.params())
    for (auto& v : p.value.data()) v = p.name.ends_with(".gamma") ? 1.0 + d(rng) : d(rng);
}

}  // namespace

TEST(Attention, ZeroExciteGivesUniformWeights) {
  ParamStore<double> store;
  nn::AttentionSpec spec;
  spec.K = 5;
  auto rng = substream(5, "att");
  const auto att = nn::FreqAttention::create(store, "att", 8, spec, rng);
  randomize(store, 1);
  store.param(att.excite.weight).value.fill(0.0);
  store.param(*att.excite.bias).value.fill(0.0);
  const auto pi = run_attention(att, store, random_tensor({2, 8, 6, 5}, 3));
  for (double v : pi.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Attention, AveragePoolingIgnoresFrameOrder) {
  ParamStore<double> store;
  auto rng = substream(6, "att");
  const auto att = nn::FreqAttention::create(store, "att", 6, nn::AttentionSpec{}, rng);
  randomize(store, 2);
  const auto x = random_tensor({2, 6, 5, 7}, 4);
  Tensor<double> xp(x.shape());
  const std::size_t perm[] = {3, 0, 6, 1, 5, 2, 4};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t f = 0; f < 5; ++f)
        for (std::size_t t = 0; t < 7; ++t) xp.at(b, c, f, t) = x.at(b, c, f, perm[t]);
  EXPECT_LT(max_abs_diff(run_attention(att, store, x), run_attention(att, store, xp)), 1e-14);
}

TEST(TapPool, AverageOnlyMatchesAvgPooling) {
  ParamStore<double> store;
  nn::AttentionSpec avg, tap;
  tap.pooling = nn::TimePooling::tap;
  tap.tap = nn::TapTerms{false, false, true};
  auto r1 = substream(7, "att"), r2 = substream(7, "att");
  const auto a = nn::FreqAttention::create(store, "a", 6, avg, r1);
  ParamStore<double> store2;
  const auto b = nn::FreqAttention::create(store2, "a", 6, tap, r2);
  const auto x = random_tensor({2, 6, 5, 7}, 8);
  Tape<double> tape(false);
  const auto v1 = store.bind(tape, false), v2 = store2.bind(tape, false);
  std::mt19937_64 rng(0);
  nn::Context<double> c1{tape, v1, store, true, &rng, nullptr}, c2{tape, v2, store2, true, &rng, nullptr};
  const Var xv = tape.constant(x);
  const Tensor<double> want = tape.value(a.pool(c1, xv));  // copy: the next op may grow the tape
  EXPECT_LT(max_abs_diff(want, tape.value(b.pool(c2, xv))), 1e-7);
}

TEST(TapPool, StationaryTaPlusApIsTwiceTheMean) {
  ParamStore<double> store;
  auto rng = substream(8, "tap");
  const auto tap = nn::TapPool::create(store, "tap", 3, nn::TapTerms{true, false, true}, rng);
  randomize(store, 3);
  const auto x = constant_in_time(2, 3, 4, 6, 9);
  const auto y = run_tap(tap, store, x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t f = 0; f < 4; ++f) EXPECT_NEAR(y.at(b, c, f, 0), 2.0 * x.at(b, c, f, 0), 1e-12);
}

TEST(TapPool, StationaryVelocityOnlyIsTheMean) {
  ParamStore<double> store;
  auto rng = substream(9, "tap");
  const auto tap = nn::TapPool::create(store, "tap", 3, nn::TapTerms{false, true, false}, rng);
  randomize(store, 4);
  const auto x = constant_in_time(2, 3, 4, 6, 10);
  const auto y = run_tap(tap, store, x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t f = 0; f < 4; ++f) EXPECT_NEAR(y.at(b, c, f, 0), x.at(b, c, f, 0), 1e-12);
}

TEST(TapPool, EmptyTermSetIsRejected) {
  ParamStore<double> store;
  auto rng = substream(10, "tap");
  EXPECT_THROW(nn::TapPool::create(store, "tap", 3, nn::TapTerms{false, false, false}, rng), std::invalid_argument);
}

TEST(FdyForward, SingleKernelIsPlainConvolution) {
  const auto x = random_tensor({2, 3, 6, 5}, 20);
  const auto ks = random_kernels<double>(1, 4, 3, true, 21);
  const Tensor<double> pi({2, 1, 6, 1}, 1.0);
  const auto want = direct_conv(x, ks.weights[0], &ks.biases[0], 1, 1);
  EXPECT_LT(max_abs_diff(nn::fdy_forward(x, ks, pi, nn::FdyMode::efficient), want), 1e-12);
  EXPECT_LT(max_abs_diff(nn::fdy_forward(x, ks, pi, nn::FdyMode::naive), want), 1e-12);
}

TEST(FdyForward, AttentionShapeMismatchIsRejected) {
  const auto ks = random_kernels<double>(3, 2, 2, false, 1);
  EXPECT_ANY_THROW(nn::fdy_forward(random_tensor({1, 2, 5, 4}, 1), ks, random_pi<double>(1, 2, 5, 1),
                                   nn::FdyMode::efficient));
}

TEST(DfdForward, UndilatedIsBitIdenticalToFdy) {
  const auto x = random_tensor({2, 3, 7, 5}, 30);
  const auto ks = random_kernels<double>(4, 2, 3, true, 31);
  const auto pi = random_pi<double>(2, 4, 7, 32);
  const auto a = nn::dfd_forward(x, ks, pi);
  const auto b = nn::fdy_forward(x, ks, pi, nn::FdyMode::efficient);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(DfdForward, BestConfigPreservesShape) {
  const auto x = random_tensor({1, 2, 16, 9}, 33);
  auto ks = random_kernels<double>(4, 3, 2, false, 34);
  ks.dilations = {{1, 1}, {2, 1}, {3, 1}, {3, 1}};
  EXPECT_EQ(nn::dfd_forward(x, ks, random_pi<double>(1, 4, 16, 35)).shape(), (Shape{1, 3, 16, 9}));
}

TEST(DfdForward, DilationBeyondSupportIsRejected) {
  auto ks = random_kernels<double>(2, 2, 2, false, 36);
  ks.dilations = {{1, 1}, {4, 1}};
  EXPECT_THROW(nn::dfd_forward(random_tensor({1, 2, 4, 5}, 37), ks, random_pi<double>(1, 2, 4, 38)),
               std::invalid_argument);
  ks.dilations = {{1, 1}, {3, 1}};
  EXPECT_NO_THROW(nn::dfd_forward(random_tensor({1, 2, 4, 5}, 37), ks, random_pi<double>(1, 2, 4, 38)));
}

TEST(ConvLayer, PfdChannelSplitAndZeroFraction) {
  crnn::ModelConfig c = crnn::preset("toy-pfd");
  c.fraction = {1, 8};
  ParamStore<double> store;
  auto rng = substream(11, "pfd");
  const auto layer = nn::ConvLayer::create(store, "l", 3, 16, 32, c.branches(3), rng);
  EXPECT_EQ(layer.dynamic.at(0).out_channels, 4u);
  EXPECT_EQ(layer.static_channels, 28u);

  c.fraction = {0, 8};
  const auto br = c.branches(3);
  ASSERT_EQ(br.size(), 1u);
  EXPECT_EQ(br[0].kind, nn::BranchKind::static_conv);
  // a single static branch is conv2d with bias
  BuiltLayer b = build_layer(br, 3, 4);
  const auto x = random_tensor({1, 3, 6, 5}, 12);
  const auto& w = b.store.param(b.layer.static_conv->weight).value;
  const auto& bias = b.store.param(*b.layer.static_conv->bias).value;
  EXPECT_LT(max_abs_diff(run_layer(b.layer, b.store, x, false), direct_conv(x, w, &bias, 1, 1)), 1e-12);

  c.fraction = {1, 3};
  EXPECT_THROW(nn::ConvLayer::create(store, "m", 3, 16, 32, c.branches(3), rng), std::invalid_argument);
}

TEST(ConvLayer, SingleMdfdBranchEqualsPfd) {
  crnn::ModelConfig p = crnn::preset("toy-pfd");
  p.fraction = {1, 8};
  p.dilation_layers = {3};
  crnn::ModelConfig m = crnn::preset("toy-mdfd");
  m.pre_conv = false;
  m.branch_dilations = {{1}};
  m.branch_fraction = {1, 8};
  m.channel_multiple = {1, 1};
  m.dilation_layers = {3};
  const auto x = random_tensor({2, 8, 8, 6}, 13);
  BuiltLayer a = build_layer(p.branches(3), 8, 16), b = build_layer(m.branches(3), 8, 16);
  ASSERT_EQ(a.store.scalar_count(), b.store.scalar_count());
  EXPECT_LT(max_abs_diff(run_layer(a.layer, a.store, x, true), run_layer(b.layer, b.store, x, true)), 1e-12);
}

TEST(ConvLayer, PaperBestMdfdPreservesShape) {
  const crnn::ModelConfig m = crnn::preset("mdfd");
  const auto br = m.branches(3);
  BuiltLayer b = build_layer(br, 8, 16);
  EXPECT_EQ(b.layer.out_channels, 22u);  // 11/8 of 16
  const auto y = run_layer(b.layer, b.store, random_tensor({1, 8, 16, 6}, 14), true);
  EXPECT_EQ(y.shape(), (Shape{1, 22, 16, 6}));
}

TEST(ConvLayer, SwappingIdenticalBranchesSwapsChannelBlocks) {
  nn::BranchSpec d;
  d.fraction = {1, 4};
  nn::BranchSpec s;
  s.kind = nn::BranchKind::static_conv;
  s.fraction = {1, 2};
  BuiltLayer a = build_layer({d, d, s}, 4, 8);
  BuiltLayer b = build_layer({d, d, s}, 4, 8);
  // b's branch 0 gets a's branch 1 parameters and vice versa
  for (auto& p : b.store.params()) {
    std::string src = p.name;
    if (src.find(".dyn0.") != std::string::npos) src.replace(src.find(".dyn0."), 6, ".dyn1.");
    else if (src.find(".dyn1.") != std::string::npos) src.replace(src.find(".dyn1."), 6, ".dyn0.");
    p.value = a.store.param(a.store.find(src)).value;
  }
  const auto x = random_tensor({2, 4, 6, 5}, 15);
  const auto ya = run_layer(a.layer, a.store, x, false), yb = run_layer(b.layer, b.store, x, false);
  const std::size_t map[] = {2, 3, 0, 1, 4, 5, 6, 7};
  for (std::size_t bb = 0; bb < 2; ++bb)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t f = 0; f < 6; ++f)
        for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(yb.at(bb, c, f, t), ya.at(bb, map[c], f, t));
}

TEST(ConvLayer, VariantsPreserveFrequencyAndTime) {
  for (const std::string v : {"toy-baseline", "toy-fdy", "toy-dfd", "toy-pfd", "toy-tfd", "toy-mdfd"}) {
    const auto c = crnn::preset(v);
    const auto br = c.branches(3);
    BuiltLayer b = build_layer(br, 32, 64);
    const auto y = run_layer(b.layer, b.store, random_tensor({1, 32, 8, 6}, 16), true);
    EXPECT_EQ(y.dim(2), 8u) << v;
    EXPECT_EQ(y.dim(3), 6u) << v;
  }
}

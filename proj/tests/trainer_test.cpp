// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "freqdyn/trainer/trainer.hpp"
#include "test_util.hpp"

using namespace freqdyn;
using namespace freqdyn::trainer;
using freqdyn::testing::random_tensor;

namespace {

// tiny network and one-second clips so a few epochs take seconds
struct Tiny {
  crnn::ModelConfig model;
  features::MelConfig mel;
  TrainData data;
};

Tiny tiny(std::size_t n_strong = 4) {
  Tiny t;
  t.model = crnn::preset("toy-fdy");
  t.model.n_mels = 32;
  t.model.channels = {4, 8, 8, 8};
  t.model.pools = {{2, 2}, {2, 2}, {2, 1}, {2, 1}};
  t.model.gru_hidden = 8;
  t.model.gru_layers = 1;
  t.model.n_classes = datakit::kNumClasses;
  t.model.validate();
  t.mel.n_mels = 32;
  t.mel.n_fft = 512;
  datakit::SynthConfig sc;
  sc.clip_seconds = 1.0;
  sc.min_event_seconds = 0.2;
  sc.max_event_seconds = 0.5;
  sc.max_events = 2;
  const auto ds = datakit::make_dataset(3, n_strong, 2, 2, sc);
  t.data = make_train_data(ds, t.mel, t.model.time_pool(), t.model.n_classes);
  return t;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig tc = TrainConfig::toy();
  tc.epochs = epochs;
  tc.batch_strong = 2;
  tc.batch_weak = 2;
  tc.batch_unlabeled = 2;
  tc.loss.ramp_epochs = 2;
  return tc;
}

}  // namespace

TEST(Bce, UniformHalfIsLn2) {
  Tape<double> tape(false);
  const Var p = tape.constant(Tensor<double>({3, 7, 5}, 0.5));
  auto target = random_tensor({3, 7, 5}, 1, 0, 1);
  for (auto& v : target.data()) v = v > 0.5 ? 1.0 : 0.0;
  EXPECT_NEAR(tape.value(bce_loss(tape, p, target))[0], std::numbers::ln2, 1e-6);
  // soft targets too: -[l ln .5 + (1-l) ln .5] = ln 2 for any l
  const auto soft = random_tensor({3, 7, 5}, 2, 0, 1);
  EXPECT_NEAR(tape.value(bce_loss(tape, p, soft))[0], std::numbers::ln2, 1e-12);
}

TEST(Bce, ClampKeepsLossFinite) {
  Tape<double> tape(false);
  Tensor<double> p({2}), l({2});
  p[0] = 0.0;
  p[1] = 1.0;
  l[0] = 1.0;
  l[1] = 0.0;
  const double v = tape.value(bce_loss(tape, tape.constant(p), l))[0];
  EXPECT_NEAR(v, -std::log(kBceClamp), 1e-9);
  Tensor<double> bad({2}, 1.5);
  EXPECT_THROW(bce_loss(tape, tape.constant(p), bad), std::domain_error);
}

TEST(ConsistencyWeight, RampEndpointsExact) {
  LossWeights w;
  w.w_cons_max = 2.0;
  w.ramp_epochs = 50;
  EXPECT_EQ(consistency_weight(0, w), 0.0);
  EXPECT_EQ(consistency_weight(50, w), 2.0);
  EXPECT_EQ(consistency_weight(80, w), 2.0);
  EXPECT_EQ(consistency_weight(25, w), 1.0);
  EXPECT_EQ(consistency_weight(-3, w), 0.0);
}

TEST(Ema, ContractionIdentityExact) {
  ParamStore<double> t, s;
  t.add("a", random_tensor({17}, 1));
  s.add("a", random_tensor({17}, 2));
  t.add_batch_norm_state("bn", 3);
  s.add_batch_norm_state("bn", 3);
  // dyadic values keep every product exact
  for (auto* st : {&t, &s})
    for (auto& v : st->param(0).value.data()) v = std::round(v * 1024) / 1024;
  s.bn_states()[0].state.running_mean = Tensor<double>({3}, 0.5);
  const auto t0 = t.param(0).value, s0 = s.param(0).value;
  const double alpha = 0.75;
  ema_update(t, s, alpha);
  for (std::size_t i = 0; i < 17; ++i) {
    EXPECT_EQ(t.param(0).value[i] - s0[i], alpha * (t0[i] - s0[i])) << i;
    EXPECT_EQ(t.param(0).value[i], 0.75 * t0[i] + 0.25 * s0[i]);
  }
  EXPECT_EQ(t.bn_states()[0].state.running_mean[0], 0.125);
  EXPECT_EQ(t.bn_states()[0].state.running_var[0], 1.0);
  // equal stores are a fixed point
  ParamStore<double> u = s;
  ema_update(u, s, 0.99);
  EXPECT_EQ(u.param(0).value[5], s.param(0).value[5]);
  ParamStore<double> other;
  EXPECT_THROW(ema_update(other, s, 0.5), ShapeError);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_EQ(cosine_lr(1e-3, 0, 40), 1e-3);
  EXPECT_EQ(cosine_lr(1e-3, 40, 40), 0.0);
  EXPECT_NEAR(cosine_lr(1e-3, 20, 40), 5e-4, 1e-18);
  EXPECT_EQ(cosine_lr(1e-3, 60, 40), 0.0);
}

TEST(TotalLoss, EmptySubsetsContributeZero) {
  Tape<double> tape(false);
  const std::size_t B = 3, T = 4, C = 2;
  const Var strong = tape.constant(Tensor<double>({B, T, C}, 0.5));
  const Var weak = tape.constant(Tensor<double>({B, C}, 0.5));
  BatchTargets tg;
  tg.n_strong = 0;
  tg.n_weak = 0;
  tg.n_unlabeled = B;
  LossWeights w;
  LossComponents parts;
  const Var l = total_loss(tape, strong, weak, Tensor<double>({B, T, C}, 0.25), Tensor<double>({B, C}, 0.5), tg,
                           w.ramp_epochs, w, parts);
  EXPECT_EQ(parts.strong, 0.0);
  EXPECT_EQ(parts.weak, 0.0);
  EXPECT_NEAR(parts.consistency, 0.0625, 1e-15);
  EXPECT_NEAR(tape.value(l)[0], w.w_cons_max * 0.0625, 1e-15);
}

TEST(OutputHop, ToyAndFullRate) {
  const features::MelConfig mel;
  EXPECT_DOUBLE_EQ(output_hop(mel, 4), 0.064);
}

TEST(MeanTeacher, ResumeReproducesUninterruptedRun) {
  const auto t = tiny();
  const auto tc = tiny_train(3);
  const auto dir = std::filesystem::temp_directory_path() / "freqdyn_trainer_resume";
  std::filesystem::remove_all(dir);

  MeanTeacher full(t.model, tc, 7);
  FitOptions none;
  const auto a = fit(full, t.data, nullptr, none);

  MeanTeacher first(t.model, tc, 7);
  FitOptions part;
  part.out_dir = dir;
  part.max_epochs_this_run = 1;
  fit(first, t.data, nullptr, part);
  MeanTeacher second(t.model, tc, 7);
  part.resume = true;
  part.max_epochs_this_run.reset();
  const auto b = fit(second, t.data, nullptr, part);

  ASSERT_EQ(second.epochs_done(), 3u);
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_EQ(a.log.back().mean.total, b.log.back().mean.total);
  const auto& ps = full.student().params().params();
  const auto& qs = second.student().params().params();
  for (std::size_t i = 0; i < ps.size(); ++i)
    ASSERT_TRUE(std::equal(ps[i].value.data().begin(), ps[i].value.data().end(), qs[i].value.data().begin()))
        << ps[i].name;
  const auto& pt = full.teacher().params().params();
  const auto& qt = second.teacher().params().params();
  for (std::size_t i = 0; i < pt.size(); ++i)
    ASSERT_TRUE(std::equal(pt[i].value.data().begin(), pt[i].value.data().end(), qt[i].value.data().begin()))
        << pt[i].name;
  EXPECT_TRUE(std::filesystem::exists(dir / "log.csv"));
  std::filesystem::remove_all(dir);
}

TEST(MeanTeacher, LossDecreasesOnTinyData) {
  const auto t = tiny();
  auto tc = tiny_train(8);
  tc.augment = AugmentConfig::none();
  tc.lr = 3e-3;
  MeanTeacher mt(t.model, tc, 1);
  const auto r = fit(mt, t.data, &t.data, {});
  ASSERT_EQ(r.log.size(), 8u);
  EXPECT_LT(r.log.back().mean.strong, r.log.front().mean.strong);
  ASSERT_TRUE(r.best_epoch.has_value());
  for (const auto& e : r.log) {
    EXPECT_TRUE(std::isfinite(e.mean.total));
    EXPECT_TRUE(e.has_val);
  }
}

TEST(TrainConfig, ValidationErrors) {
  TrainConfig tc;
  tc.epochs = 0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.ema_alpha = 1.0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
}

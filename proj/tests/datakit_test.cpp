// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "freqdyn/common/run_config.hpp"
#include "freqdyn/datakit/augment.hpp"
#include "freqdyn/datakit/dataset_io.hpp"
#include "freqdyn/datakit/labels.hpp"
#include "freqdyn/datakit/synth.hpp"
#include "test_util.hpp"

using namespace freqdyn;
using namespace freqdyn::datakit;
using freqdyn::testing::random_tensor;

namespace {

SynthConfig short_clips() {
  SynthConfig c;
  c.clip_seconds = 2.0;
  c.min_event_seconds = 0.2;
  c.max_event_seconds = 1.0;
  return c;
}

Sample sample(std::size_t F, std::size_t T, std::size_t pool, std::uint64_t seed) {
  Sample s;
  s.mel = random_tensor<float>({F, T}, seed);
  s.strong = random_tensor<float>({T / pool, 3}, seed + 1, 0, 1);
  s.weak = random_tensor<float>({3}, seed + 2, 0, 1);
  return s;
}

}  // namespace

TEST(Synth, DeterministicAndWellFormed) {
  const auto cfg = short_clips();
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto a = synth_clip(seed, cfg), b = synth_clip(seed, cfg);
    ASSERT_EQ(a.wave, b.wave);
    ASSERT_EQ(a.events, b.events);
    EXPECT_EQ(a.wave.size(), 32000u);
    EXPECT_GE(a.events.size(), cfg.min_events);
    EXPECT_LE(a.events.size(), cfg.max_events);
    for (const auto& e : a.events) {
      EXPECT_GE(e.onset, 0.0);
      EXPECT_LE(e.offset, cfg.clip_seconds);
      EXPECT_GE(e.offset - e.onset, cfg.min_event_seconds - 1e-9);
      EXPECT_LT(e.class_id, kNumClasses);
      for (const auto& o : a.events)
        if (&o != &e && o.class_id == e.class_id) EXPECT_TRUE(o.offset <= e.onset || e.offset <= o.onset);
    }
    EXPECT_EQ(a.weak, classes_of(a.events));
    for (double v : a.wave) ASSERT_LE(std::abs(v), 1.0);
  }
  EXPECT_NE(synth_clip(1, cfg).wave, synth_clip(2, cfg).wave);
}

TEST(Synth, DatasetSplitsCarryTheirSupervision) {
  const auto ds = make_dataset(4, 3, 2, 2, short_clips());
  ASSERT_EQ(ds.strong.size(), 3u);
  for (const auto& c : ds.weak) {
    EXPECT_TRUE(c.events.empty());
    EXPECT_FALSE(c.weak.empty());
    EXPECT_EQ(c.supervision, Supervision::weak);
  }
  for (const auto& c : ds.unlabeled) {
    EXPECT_TRUE(c.events.empty());
    EXPECT_TRUE(c.weak.empty());
  }
  EXPECT_NE(ds.strong[0].wave, ds.weak[0].wave);
  const auto again = make_dataset(4, 3, 2, 2, short_clips());
  EXPECT_EQ(again.unlabeled[1].wave, ds.unlabeled[1].wave);
}

TEST(Labels, StrongAndWeakRoundTripExactly) {
  std::vector<StrongRow> rows{{"a.wav", {0, 0.1, 0.30000000000000004}}, {"b.wav", {4, 1.0 / 3.0, 2.5}}};
  std::stringstream ss;
  write_strong_tsv(ss, rows);
  EXPECT_EQ(read_strong_tsv(ss), rows);
  std::vector<WeakRow> weak{{"a.wav", {0, 2}}, {"c.wav", {4}}};
  std::stringstream ws;
  write_weak_tsv(ws, weak);
  EXPECT_EQ(read_weak_tsv(ws), weak);
}

TEST(Labels, MalformedRowsAreRejected) {
  std::stringstream bad_time("filename\tonset\toffset\tevent_label\na.wav\tx\t1\ttone\n");
  EXPECT_THROW(read_strong_tsv(bad_time), LabelError);
  std::stringstream inverted("filename\tonset\toffset\tevent_label\na.wav\t2\t1\ttone\n");
  EXPECT_THROW(read_strong_tsv(inverted), LabelError);
  std::stringstream unknown("filename\tonset\toffset\tevent_label\na.wav\t0\t1\tdog\n");
  EXPECT_THROW(read_strong_tsv(unknown), LabelError);
  EXPECT_THROW(read_weak_tsv(std::filesystem::path("/nonexistent/weak.tsv")), LabelError);
}

TEST(Labels, GroupByFileKeepsEmptyClips) {
  const auto g = group_by_file({{"a", {1, 0, 1}}, {"a", {2, 1, 2}}}, {"a", "b"});
  EXPECT_EQ(g.at("a").size(), 2u);
  EXPECT_TRUE(g.at("b").empty());
}

TEST(Augment, MixupBlendsTargetsLikeFeatures) {
  const auto a = sample(8, 16, 4, 1), b = sample(8, 16, 4, 5);
  const auto m = mixup(a, b, 0.25);
  for (std::size_t i = 0; i < a.mel.size(); ++i) EXPECT_NEAR(m.mel[i], 0.25 * a.mel[i] + 0.75 * b.mel[i], 1e-6);
  for (std::size_t i = 0; i < a.strong.size(); ++i)
    EXPECT_NEAR(m.strong[i], 0.25 * a.strong[i] + 0.75 * b.strong[i], 1e-6);
  const auto same = mixup(a, b, 1.0);
  EXPECT_EQ(same.mel.data()[3], a.mel.data()[3]);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const double l = sample_beta(0.2, rng);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
  }
}

TEST(Augment, RollMovesTargetsWithFrames) {
  auto s = sample(4, 16, 4, 2);
  const auto before = s;
  roll_frames(s, 8, 4);
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t t = 0; t < 16; ++t) EXPECT_EQ(s.mel.at(f, (t + 8) % 16), before.mel.at(f, t));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.strong.at((t + 2) % 4, c), before.strong.at(t, c));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(frame_shift(s, 8, 4, rng) % 4, 0);
}

TEST(Augment, TimeMaskZeroesAlignedSpans) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 50; ++k) {
    auto s = sample(4, 32, 4, 10 + k);
    mask_time(s, 12, 4, rng);
    for (std::size_t tp = 0; tp < 8; ++tp) {
      bool zero_frames = true;
      for (std::size_t t = 4 * tp; t < 4 * tp + 4; ++t)
        for (std::size_t f = 0; f < 4; ++f) zero_frames &= s.mel.at(f, t) == 0.0f;
      bool zero_target = true;
      for (std::size_t c = 0; c < 3; ++c) zero_target &= s.strong.at(tp, c) == 0.0f;
      EXPECT_EQ(zero_frames, zero_target) << k << " " << tp;
    }
  }
}

TEST(Augment, FilterGainsStayInRange) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<float>({32, 10}, 6, -5, 0);
  const auto same = filter_augment(x, FilterKind::step, 3, 6, 0.0, rng);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(same[i], x[i]);
  // natural-log domain: 6 dB is ln(10^(6/20)) in magnitude
  const double bound = 6.0 / 20.0 * std::log(10.0) + 1e-5;
  for (auto kind : {FilterKind::step, FilterKind::linear}) {
    const auto y = filter_augment(x, kind, 3, 6, 6.0, rng);
    for (std::size_t f = 0; f < 32; ++f) {
      const double g = y.at(f, 0) - x.at(f, 0);
      EXPECT_LE(std::abs(g), bound);
      for (std::size_t t = 1; t < 10; ++t) EXPECT_NEAR(y.at(f, t) - x.at(f, t), g, 1e-5);
    }
  }
}

TEST(DatasetIo, WriteThenReadRestoresLabels) {
  const auto dir = std::filesystem::temp_directory_path() / "freqdyn_dataset_io";
  std::filesystem::remove_all(dir);
  const auto ds = make_dataset(8, 2, 2, 1, short_clips());
  const auto val = make_validation(8, 2, short_clips());
  write_dataset(dir, ds, val, 16000);
  const auto strong = read_split(dir, "strong");
  ASSERT_EQ(strong.size(), 2u);
  EXPECT_EQ(strong[0].events, ds.strong[0].events);
  for (std::size_t i = 0; i < strong[0].wave.size(); ++i)
    ASSERT_NEAR(strong[0].wave[i], ds.strong[0].wave[i], 1.0 / 32768.0);
  EXPECT_EQ(read_split(dir, "weak")[1].weak, ds.weak[1].weak);
  EXPECT_EQ(read_split(dir, "validation").size(), 2u);
  EXPECT_TRUE(read_split(dir, "unlabeled")[0].weak.empty());
  EXPECT_THROW(read_split(dir, "bogus"), std::invalid_argument);
  EXPECT_NE(fnv1a64({'a'}), fnv1a64({'b'}));
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  std::filesystem::remove_all(dir);
}

TEST(RunConfig, DefaultsValidateAndKeysOverride) {
  RunConfig::defaults().validate();
  const auto c = parse_run_config(
      "data:\n  n_strong: 32\nmodel:\n  preset: toy-baseline\ntrain:\n  epochs: 40\n  ramp_epochs: 10\n  lr: 0.002\neval:\n  median_window: 5\n");
  EXPECT_EQ(c.data.n_strong, 32u);
  EXPECT_EQ(c.model.variant, crnn::Variant::plain);
  EXPECT_EQ(c.train.epochs, 40u);
  EXPECT_EQ(c.train.batch_strong, 4u);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.002);
  EXPECT_EQ(c.eval.median_window, 5u);
  c.validate();
  const auto f = with_preset(c, "toy-fdy");
  EXPECT_EQ(f.model.variant, crnn::Variant::fdy);
  EXPECT_EQ(f.train.epochs, 40u);
}

TEST(RunConfig, UnknownKeysAndBadValuesAreErrors) {
  EXPECT_THROW(parse_run_config("trian:\n  epochs: 3\n"), crnn::ConfigError);
  EXPECT_THROW(parse_run_config("train:\n  epoch: 3\n"), crnn::ConfigError);
  EXPECT_THROW(parse_run_config("model:\n  preset: huge\n"), crnn::ConfigError);
  EXPECT_THROW(parse_run_config("eval: [1, 2"), crnn::ConfigError);
  EXPECT_THROW(parse_run_config("eval:\n  median_window: 4\n").validate(), crnn::ConfigError);
  EXPECT_THROW(parse_run_config("features:\n  n_mels: 64\nmodel:\n  n_mels: 128\n").validate(), crnn::ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.yaml"), std::ios_base::failure);
}

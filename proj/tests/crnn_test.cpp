// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "freqdyn/crnn/checkpoint.hpp"
#include "freqdyn/crnn/model.hpp"
#include "test_util.hpp"

using namespace freqdyn;
using namespace freqdyn::crnn;
using freqdyn::testing::random_tensor;

namespace {

std::size_t count(const std::string& preset_name) {
  return Model<float>::build(preset(preset_name), 0).count_params();
}

// toy network on 32 mel bins, fast enough for many forwards
ModelConfig small(Variant v = Variant::fdy) {
  ModelConfig c = preset("toy-fdy");
  c.variant = v;
  c.n_mels = 32;
  c.channels = {4, 8, 8, 8};
  c.pools = {{2, 2}, {2, 2}, {2, 1}, {2, 1}};
  c.gru_hidden = 8;
  c.gru_layers = 1;
  c.n_classes = 3;
  c.validate();
  return c;
}

}  // namespace

TEST(ParamCount, FullSizePresetsWithinFivePercentOfPublished) {
  const std::pair<const char*, double> published[] = {
      {"baseline", 4.428e6}, {"fdy", 11.061e6}, {"pfd", 5.401e6}, {"tfd", 12.703e6}, {"mdfd", 18.157e6}};
  for (const auto& [name, want] : published) {
    const double got = double(count(name));
    EXPECT_LT(std::abs(got - want) / want, 0.05) << name << " " << got;
  }
}

TEST(ParamCount, ExactCounts) {
  EXPECT_EQ(count("baseline"), 4427956u);
  EXPECT_EQ(count("fdy"), 11061468u);
  EXPECT_EQ(count("dfd"), 11061468u);
  EXPECT_EQ(count("pfd"), 5401604u);
  EXPECT_EQ(count("mdfd"), 18157668u);
}

TEST(ParamCount, PfdSavesAtLeastFortyFivePercent) {
  const double fdy = double(count("fdy")), pfd = double(count("pfd"));
  EXPECT_GE((fdy - pfd) / fdy, 0.45);
}

TEST(Model, ToyShapesAfterTruncation) {
  auto m = Model<float>::build(preset("toy-fdy"), 1);
  EXPECT_EQ(usable_frames(626, 4), 624u);
  const auto x = truncate_frames(random_tensor<float>({2, 1, 128, 626}, 3, 0, 1), 4);
  ASSERT_EQ(x.dim(3), 624u);
  const auto p = m.predict(x);
  EXPECT_EQ(p.strong.shape(), (Shape{2, 156, 5}));
  EXPECT_EQ(p.weak.shape(), (Shape{2, 5}));
  EXPECT_THROW(m.predict(random_tensor<float>({1, 1, 128, 626}, 3)), ShapeError);
  EXPECT_THROW(m.predict(random_tensor<float>({1, 1, 64, 624}, 3)), ShapeError);
}

TEST(Model, ZeroHeadGivesOneHalf) {
  auto m = Model<double>::build(small(), 2);
  auto& st = m.params();
  st.param(st.find("head.strong.weight")).value.fill(0.0);
  const auto p = m.predict(Tensor<double>({2, 1, 32, 16}));
  for (double v : p.strong.data()) EXPECT_EQ(v, 0.5);
  for (double v : p.weak.data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Model, WeakLiesBetweenFrameExtremes) {
  for (Variant v : {Variant::plain, Variant::fdy, Variant::tfd}) {
    auto m = Model<double>::build(small(v), 4);
    const auto p = m.predict(random_tensor({3, 1, 32, 24}, 5, 0, 1));
    const std::size_t T = p.strong.dim(1), C = p.strong.dim(2);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        double lo = 1, hi = 0;
        for (std::size_t t = 0; t < T; ++t) {
          lo = std::min(lo, p.strong.at(b, t, c));
          hi = std::max(hi, p.strong.at(b, t, c));
        }
        EXPECT_GE(p.weak.at(b, c), lo - 1e-12);
        EXPECT_LE(p.weak.at(b, c), hi + 1e-12);
      }
  }
}

TEST(Model, SameSeedSameBytes) {
  auto a = Model<float>::build(small(), 9), b = Model<float>::build(small(), 9), c = Model<float>::build(small(), 10);
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& x = a.params().param(i).value;
    ASSERT_EQ(std::memcmp(x.raw(), b.params().param(i).value.raw(), x.size() * sizeof(float)), 0);
    differs |= std::memcmp(x.raw(), c.params().param(i).value.raw(), x.size() * sizeof(float)) != 0;
  }
  EXPECT_TRUE(differs);
}

TEST(Model, DynamicLayerPlacement) {
  const auto cfg = preset("fdy");
  EXPECT_FALSE(cfg.is_dynamic_layer(1));
  for (std::size_t l = 2; l <= 7; ++l) EXPECT_TRUE(cfg.is_dynamic_layer(l)) << l;
  EXPECT_FALSE(preset("baseline").is_dynamic_layer(3));
  const auto dfd = preset("dfd");
  EXPECT_FALSE(dfd.is_dilation_layer(7));  // two bins left
  EXPECT_TRUE(dfd.is_dilation_layer(6));
}

TEST(Recorder, OneEntryPerDynamicLayerOnTheSimplex) {
  auto m = Model<double>::build(small(), 3);
  auto x = random_tensor({2, 1, 32, 16}, 6, 0, 1);
  // second clip a copy of the first
  std::copy_n(x.raw(), 32 * 16, x.raw() + 32 * 16);
  nn::AttentionRecorder<double> rec;
  m.predict(x, &rec);
  ASSERT_EQ(rec.entries.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& e = rec.entries[i];
    EXPECT_EQ(e.layer, i + 2);
    const std::size_t K = e.pi.dim(1), F = e.pi.dim(2);
    EXPECT_EQ(K, 4u);
    EXPECT_EQ(F, m.config().input_freq(e.layer));
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) {
        s += e.pi.at(0, k, f, 0);
        EXPECT_EQ(e.pi.at(0, k, f, 0), e.pi.at(1, k, f, 0));
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  nn::AttentionRecorder<double> none;
  auto plain = Model<double>::build(small(Variant::plain), 3);
  plain.predict(x, &none);
  EXPECT_TRUE(none.entries.empty());
}

TEST(Checkpoint, RoundTripPredictsIdentically) {
  const auto dir = std::filesystem::temp_directory_path() / "freqdyn_crnn_ckpt";
  std::filesystem::remove_all(dir);
  auto m = Model<float>::build(small(Variant::tfd), 12);
  save_checkpoint(dir, m);
  auto r = load_checkpoint(dir);
  EXPECT_EQ(r.count_params(), m.count_params());
  const auto x = random_tensor<float>({1, 1, 32, 16}, 1, 0, 1);
  const auto a = m.predict(x), b = r.predict(x);
  EXPECT_TRUE(std::equal(a.strong.data().begin(), a.strong.data().end(), b.strong.data().begin()));
  EXPECT_EQ(load_checkpoint_config(dir).variant, Variant::tfd);
  // a store with different shapes is rejected
  auto other = Model<float>::build(small(Variant::plain), 1);
  EXPECT_ANY_THROW(load_params(dir, other.params()));
  std::filesystem::remove_all(dir);
}

TEST(Config, ValidationErrors) {
  auto c = small();
  c.pools.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.variant = Variant::dfd;
  c.dilations = {{1, 1}, {2, 1}};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.n_mels = 40;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.dynamic_layers = {1};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("fdyy"), ConfigError);
  EXPECT_THROW(preset("nope"), ConfigError);
}

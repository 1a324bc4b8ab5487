#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "patchguard/errors.hpp"
#include "patchguard/poison.hpp"
#include "test_support.hpp"

namespace pg = patchguard;
namespace ts = testing_support;

namespace {

const pg::Shape kShape{3, 8, 8};

pg::Image constant_image(float v) { return pg::Image(kShape, v); }

}  // namespace

TEST(PatchTrigger, CoversOnlyTheCorner) {
  const auto t = pg::make_patch_trigger(kShape, 3, pg::Corner::bottom_right, {1.0f}, 0);
  const auto out = pg::apply_trigger(constant_image(0.25f), t);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        const bool inside = y >= 5 && x >= 5;
        EXPECT_FLOAT_EQ(out.at(c, y, x), inside ? 1.0f : 0.25f) << c << y << x;
      }
    }
  }
}

TEST(PatchTrigger, PerChannelValuesAndTopLeft) {
  const auto t = pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {0.1f, 0.5f, 0.9f}, 1);
  const auto out = pg::apply_trigger(constant_image(0.0f), t);
  EXPECT_FLOAT_EQ(out.at(0, 1, 1), 0.1f);
  EXPECT_FLOAT_EQ(out.at(1, 0, 0), 0.5f);
  EXPECT_FLOAT_EQ(out.at(2, 1, 0), 0.9f);
  EXPECT_FLOAT_EQ(out.at(2, 2, 2), 0.0f);
}

TEST(PatchTrigger, RejectsOversizedPatchAndBadValues) {
  EXPECT_THROW(pg::make_patch_trigger(kShape, 9, pg::Corner::top_left, {1.0f}, 0),
               pg::ConfigError);
  EXPECT_THROW(pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.0f, 0.0f}, 0),
               pg::ConfigError);
  EXPECT_THROW(pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.5f}, 0),
               pg::ConfigError);
}

TEST(SinglePixelTrigger, ChangesOnePixel) {
  const auto x = ts::random_image(kShape, 3);
  const auto t = pg::make_single_pixel_trigger(kShape, 4, 6, {1.0f}, 0);
  const auto out = pg::apply_trigger(x, t);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) changed += out[i] != x[i];
  EXPECT_LE(changed, 3u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(out.at(c, 4, 6), 1.0f);
  EXPECT_THROW(pg::make_single_pixel_trigger(kShape, 8, 0, {1.0f}, 0), pg::ConfigError);
}

TEST(BlendTrigger, ArithmeticFixtures) {
  const auto ones = pg::Image(kShape, 1.0f);
  const auto t = pg::make_blend_trigger(ones, 0.2, 0);
  const auto a = pg::apply_trigger(constant_image(0.0f), t);
  for (float v : a.data()) EXPECT_FLOAT_EQ(v, 0.2f);
  const auto half = pg::make_blend_trigger(ones, 0.5, 0);
  const auto b = pg::apply_trigger(constant_image(0.5f), half);
  for (float v : b.data()) EXPECT_FLOAT_EQ(v, 0.75f);
}

TEST(BlendTrigger, AlphaMustBeInsideOpenInterval) {
  const auto ones = pg::Image(kShape, 1.0f);
  EXPECT_THROW(pg::make_blend_trigger(ones, 0.0, 0), pg::ConfigError);
  EXPECT_THROW(pg::make_blend_trigger(ones, 1.0, 0), pg::ConfigError);
  EXPECT_THROW(pg::make_blend_trigger("stripes", kShape, 0.1, 0), pg::ConfigError);
}

TEST(BlendTrigger, CheckerboardPattern) {
  const auto p = pg::blend_pattern("checkerboard", kShape);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        EXPECT_EQ(p.at(c, y, x), p.at(0, y, x));
        EXPECT_NE(p.at(c, y, x), p.at(c, y, (x + 1) % 8));
      }
    }
  }
}

TEST(SinusoidTrigger, BoundColumnsAndFirstColumn) {
  const double v = 0.08;
  const auto t = pg::make_sinusoid_trigger(kShape, v, 2, 0);
  const auto x = constant_image(0.5f);
  const auto out = pg::apply_trigger(x, t);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 8; ++y) {
      EXPECT_FLOAT_EQ(out.at(c, y, 0), 0.5f);
      for (std::size_t col = 0; col < 8; ++col) {
        EXPECT_LE(std::abs(out.at(c, y, col) - 0.5f), v + 1e-6);
        EXPECT_FLOAT_EQ(out.at(c, y, col), out.at(0, 0, col));
      }
    }
  }
  // Column 1 of 8 at frequency 2 is a quarter period: the full amplitude.
  EXPECT_NEAR(out.at(0, 0, 1), 0.5 + v, 1e-6);
  EXPECT_NEAR(out.at(0, 0, 3), 0.5 - v, 1e-6);
}

TEST(SinusoidTrigger, AmplitudeAndFrequencyRanges) {
  EXPECT_THROW(pg::make_sinusoid_trigger(kShape, 0.0, 2, 0), pg::ConfigError);
  EXPECT_THROW(pg::make_sinusoid_trigger(kShape, 0.3, 2, 0), pg::ConfigError);
  EXPECT_THROW(pg::make_sinusoid_trigger(kShape, 0.1, 0.5, 0), pg::ConfigError);
  EXPECT_NO_THROW(pg::make_sinusoid_trigger(kShape, 0.25, 1, 0));
}

TEST(ApplyTrigger, ClampsAndDoesNotMutate) {
  const auto t = pg::make_sinusoid_trigger(kShape, 0.2, 2, 0);
  const auto x = constant_image(0.95f);
  const auto copy = x;
  const auto out = pg::apply_trigger(x, t);
  EXPECT_EQ(x, copy);
  for (float v : out.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_FLOAT_EQ(out.at(0, 0, 1), 1.0f);
}

TEST(ApplyTrigger, ShapeMismatchIsDimensionError) {
  const auto t = pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.0f}, 0);
  EXPECT_THROW(pg::apply_trigger(pg::Image({3, 4, 4}), t), pg::DimensionError);
}

TEST(ApplyTrigger, ZeroAndFullMask) {
  const auto x = ts::random_image(kShape, 1);
  const auto delta = ts::random_image(kShape, 2);
  const pg::Image zero(kShape, 0.0f), one(kShape, 1.0f);
  EXPECT_EQ(pg::superimpose(x, zero, delta, zero), x);
  EXPECT_EQ(pg::superimpose(x, one, delta, zero), delta);
}

TEST(TriggerJson, RoundTripsEveryFamily) {
  const std::vector<pg::TriggerSpec> triggers{
      pg::make_patch_trigger(kShape, 3, pg::Corner::top_right, {0.2f, 0.4f, 0.6f}, 2),
      pg::make_single_pixel_trigger(kShape, 1, 2, {1.0f}, 1),
      pg::make_blend_trigger("checkerboard", kShape, 0.15, 0),
      pg::make_blend_trigger("noise", kShape, 0.1, 3, 99),
      pg::make_sinusoid_trigger(kShape, 0.08, 3, 4),
  };
  for (const auto& t : triggers) {
    const nlohmann::json j = t;
    const auto back = j.get<pg::TriggerSpec>();
    EXPECT_EQ(back.family, t.family);
    EXPECT_EQ(back.target, t.target);
    EXPECT_EQ(back.mask, t.mask);
    EXPECT_EQ(back.pattern, t.pattern);
    EXPECT_EQ(back.offset, t.offset);
  }
}

TEST(PoisonDataset, ExactCountOnlyNonTargetAndRelabeled) {
  const auto d = ts::random_dataset(1000, 10, kShape, 4);
  const auto t = pg::make_patch_trigger(kShape, 3, pg::Corner::bottom_right, {1.0f}, 0);
  const auto r = pg::poison_dataset(d, t, 0.05, 17);
  ASSERT_EQ(r.records.size(), 50u);
  EXPECT_EQ(r.dataset.poisoned_count(), 50u);
  std::set<std::uint64_t> ids;
  for (const auto& rec : r.records) {
    EXPECT_NE(rec.original_label, 0u);
    ids.insert(rec.id);
  }
  EXPECT_EQ(ids.size(), 50u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (r.dataset.poisoned[i]) {
      EXPECT_TRUE(ids.count(d.ids[i]));
      EXPECT_EQ(r.dataset.data.labels[i], 0u);
      EXPECT_EQ(r.dataset.data.images[i], pg::apply_trigger(d.images[i], t));
    } else {
      EXPECT_EQ(r.dataset.data.labels[i], d.labels[i]);
      EXPECT_EQ(r.dataset.data.images[i], d.images[i]);
    }
  }
}

TEST(PoisonDataset, SeedControlsSelection) {
  const auto d = ts::random_dataset(200, 4, kShape, 4);
  const auto t = pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.0f}, 1);
  const auto a = pg::poison_dataset(d, t, 0.1, 5);
  const auto b = pg::poison_dataset(d, t, 0.1, 5);
  const auto c = pg::poison_dataset(d, t, 0.1, 6);
  EXPECT_EQ(a.dataset.poisoned, b.dataset.poisoned);
  EXPECT_NE(a.dataset.poisoned, c.dataset.poisoned);
}

TEST(PoisonDataset, TinyRateLeavesDataUnchanged) {
  const auto d = ts::random_dataset(10, 2, kShape, 4);
  const auto t = pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.0f}, 1);
  const auto r = pg::poison_dataset(d, t, 0.05, 1);
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.dataset.data.checksum(), d.checksum());
}

TEST(PoisonDataset, RateValidation) {
  const auto d = ts::random_dataset(100, 2, kShape, 4);
  const auto t = pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.0f}, 1);
  EXPECT_THROW(pg::poison_dataset(d, t, 0.0, 1), pg::ConfigError);
  EXPECT_THROW(pg::poison_dataset(d, t, -0.1, 1), pg::ConfigError);
  EXPECT_THROW(pg::poison_dataset(d, t, 0.2, 1), pg::ConfigError);
  EXPECT_EQ(pg::poison_dataset(d, t, 0.2, 1, {.max_rate = 0.3}).records.size(), 20u);
  const auto bad_target = pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.0f}, 5);
  EXPECT_THROW(pg::poison_dataset(d, bad_target, 0.05, 1), pg::ConfigError);
}

TEST(TriggeredView, ExcludesTargetClass) {
  const auto d = ts::random_dataset(30, 3, kShape, 8);
  const auto t = pg::make_patch_trigger(kShape, 2, pg::Corner::top_left, {1.0f}, 2);
  const auto v = pg::triggered_view(d, t);
  EXPECT_EQ(v.size(), 20u);
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v.labels[i], 2u);
    EXPECT_NE(d.labels[v.ids[i]], 2u);
    EXPECT_EQ(v.images[i], pg::apply_trigger(d.images[v.ids[i]], t));
  }
}

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

#include "patchguard/defense.hpp"
#include "patchguard/errors.hpp"
#include "test_support.hpp"

namespace pg = patchguard;
namespace ts = testing_support;

namespace {

const pg::Shape kShape{1, 16, 16};

// Class 1 iff the bottom-right pixel is bright. Reacts only to that corner,
// like a model keyed on a corner trigger.
ts::FnClassifier corner_classifier() {
  return ts::FnClassifier(2, kShape, [](const pg::Image& x) -> std::size_t {
    return x.at(0, 15, 15) > 0.5f ? 1 : 0;
  });
}

// Class from the mean brightness of the top-left quadrant; sensitive to most
// rearrangements.
ts::FnClassifier quadrant_classifier() {
  return ts::FnClassifier(4, kShape, [](const pg::Image& x) -> std::size_t {
    double s = 0.0;
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t xx = 0; xx < 8; ++xx) s += x.at(0, y, xx);
    return std::min<std::size_t>(3, static_cast<std::size_t>(s / 64.0 * 4.0));
  });
}

pg::Image dark_with_corner() {
  pg::Image x(kShape, 0.1f);
  x.at(0, 15, 15) = 1.0f;
  return x;
}

pg::DetectionProfile small_profile() {
  pg::DetectionProfile p;
  p.trials = 16;
  p.drop_grid = 4;
  p.drop_count = 4;
  p.shuffle_grid = 4;
  p.seed = 77;
  return p;
}

}  // namespace

TEST(NearestRank, Fixtures) {
  const std::vector<std::size_t> v{5, 1, 4, 2, 3, 9, 7, 8, 6, 10};
  EXPECT_EQ(pg::nearest_rank_percentile(v, 90.0), 9u);
  EXPECT_EQ(pg::nearest_rank_percentile(v, 10.0), 1u);
  EXPECT_EQ(pg::nearest_rank_percentile(v, 0.0), 1u);
  EXPECT_EQ(pg::nearest_rank_percentile(v, 100.0), 10u);
  EXPECT_EQ(pg::nearest_rank_percentile(v, 91.0), 10u);
  EXPECT_EQ(pg::nearest_rank_percentile({4}, 50.0), 4u);
  EXPECT_THROW(pg::nearest_rank_percentile({}, 50.0), pg::CalibrationError);
  EXPECT_THROW(pg::nearest_rank_percentile(v, 101.0), pg::ConfigError);
}

TEST(NearestRank, MatchesSortedIndexForRandomSamples) {
  pg::Rng gen(5);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + pg::uniform_below(gen, 50);
    std::vector<std::size_t> v(n);
    for (auto& x : v) x = pg::uniform_below(gen, 33);
    const double q = 100.0 * pg::uniform01(gen);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    // Smallest value with at least q% of the sample at or below it.
    std::size_t expected = sorted.back();
    for (std::size_t i = 0; i < n; ++i) {
      if (100.0 * static_cast<double>(i + 1) >= q * static_cast<double>(n)) {
        expected = sorted[i];
        break;
      }
    }
    EXPECT_EQ(pg::nearest_rank_percentile(v, q), expected) << "n " << n << " q " << q;
  }
}

TEST(Decide, TruthTable) {
  pg::FlipCounts c;
  c.id = 3;
  c.drop_flips = 2;
  c.shuffle_flips = 10;
  auto v = pg::decide(c, 1, 8);
  EXPECT_EQ(v.decision, pg::Decision::backdoor);
  EXPECT_EQ(v.rule, pg::Rule::drop);
  c.drop_flips = 1;
  v = pg::decide(c, 1, 8);
  EXPECT_EQ(v.decision, pg::Decision::clean);
  EXPECT_EQ(v.rule, pg::Rule::none);
  c.shuffle_flips = 7;
  v = pg::decide(c, 1, 8);
  EXPECT_EQ(v.rule, pg::Rule::shuffle);
  c.drop_flips = 5;
  v = pg::decide(c, 1, 8);
  EXPECT_EQ(v.rule, pg::Rule::both);
  EXPECT_TRUE(v.flagged());
  EXPECT_EQ(v.id, 3u);
  EXPECT_EQ(v.k_drop, 1u);
  EXPECT_EQ(v.k_shuffle, 8u);
}

TEST(NoCleanDataProfile, ThresholdsAreZeroAndT) {
  const auto p = pg::no_clean_data_profile(12);
  EXPECT_EQ(p.trials, 12u);
  EXPECT_EQ(p.k_drop, std::optional<std::size_t>(0));
  EXPECT_EQ(p.k_shuffle, std::optional<std::size_t>(12));
  EXPECT_THROW(pg::no_clean_data_profile(0), pg::ConfigError);
  // Any drop flip or any shuffle trial that keeps the label flags the sample.
  pg::FlipCounts c;
  c.shuffle_flips = 12;
  EXPECT_FALSE(pg::decide(c, 0, 12).flagged());
  c.shuffle_flips = 11;
  EXPECT_TRUE(pg::decide(c, 0, 12).flagged());
}

TEST(Calibrate, EmptyCleanSetIsCalibrationError) {
  const auto model = corner_classifier();
  pg::LabeledDataset empty;
  empty.num_classes = 2;
  EXPECT_THROW(pg::calibrate(model, empty, small_profile()), pg::CalibrationError);
  EXPECT_THROW(pg::calibrate_from_counts({}, small_profile()), pg::CalibrationError);
}

TEST(Calibrate, ThresholdsComeFromCleanCounts) {
  std::vector<pg::FlipCounts> counts(10);
  for (std::size_t i = 0; i < 10; ++i) {
    counts[i].drop_flips = i;
    counts[i].shuffle_flips = 20 - i;
  }
  const auto p = pg::calibrate_from_counts(counts, small_profile());
  EXPECT_EQ(p.k_drop, std::optional<std::size_t>(8));
  EXPECT_EQ(p.k_shuffle, std::optional<std::size_t>(11));
  counts[4].truncated = true;
  EXPECT_THROW(pg::calibrate_from_counts(counts, small_profile()), pg::CalibrationError);
}

TEST(FlipCounts, ConstantClassifierNeverFlips) {
  const ts::FnClassifier constant(3, kShape, [](const pg::Image&) { return std::size_t{2}; });
  const auto c = pg::flip_counts(constant, ts::random_image(kShape, 1), 0, small_profile());
  EXPECT_EQ(c.drop_flips, 0u);
  EXPECT_EQ(c.shuffle_flips, 0u);
  EXPECT_EQ(c.prediction, 2u);
  EXPECT_EQ(c.trials, 16u);
}

TEST(FlipCounts, CornerClassifierRecountFromDescriptors) {
  const auto model = corner_classifier();
  const auto profile = small_profile();
  pg::FlipTrace trace;
  const auto c = pg::flip_counts(model, dark_with_corner(), 42, profile, &trace);
  ASSERT_EQ(trace.drop_descriptors.size(), 16u);
  ASSERT_EQ(trace.shuffle_descriptors.size(), 16u);
  // The corner pixel lies in patch 15 of the 4×4 grid.
  std::size_t drop_expected = 0, shuffle_expected = 0;
  for (const auto& d : trace.drop_descriptors) {
    drop_expected += std::find(d.begin(), d.end(), 15u) != d.end();
  }
  for (const auto& perm : trace.shuffle_descriptors) shuffle_expected += perm[15] != 15u;
  EXPECT_EQ(c.drop_flips, drop_expected);
  EXPECT_EQ(c.shuffle_flips, shuffle_expected);
  EXPECT_EQ(c.prediction, 1u);
}

TEST(FlipCounts, ReplayEqualsOriginalRun) {
  const auto model = quadrant_classifier();
  const auto profile = small_profile();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = ts::random_image(kShape, s);
    pg::FlipTrace trace;
    const auto live = pg::flip_counts(model, x, s, profile, &trace);
    const auto again = pg::replay_flip_counts(model, x, s, profile, trace);
    EXPECT_EQ(live.drop_flips, again.drop_flips);
    EXPECT_EQ(live.shuffle_flips, again.shuffle_flips);
    std::size_t drop_pred_flips = 0;
    for (auto p : trace.drop_predictions) drop_pred_flips += p != live.prediction;
    EXPECT_EQ(drop_pred_flips, live.drop_flips);
  }
}

TEST(ScoreDataset, InvariantToOrderAndThreads) {
  const auto model = quadrant_classifier();
  const auto profile = small_profile();
  const auto data = ts::random_dataset(24, 4, kShape, 3);
  const auto base = pg::score_dataset(model, data, profile, 1);
  std::vector<std::size_t> reversed(data.size());
  std::iota(reversed.rbegin(), reversed.rend(), std::size_t{0});
  const auto shuffled = data.subset(reversed);
  const auto other = pg::score_dataset(model, shuffled, profile, 4);
  std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> by_id;
  for (const auto& c : base) by_id[c.id] = {c.drop_flips, c.shuffle_flips};
  for (const auto& c : other) {
    EXPECT_EQ(by_id.at(c.id), std::make_pair(c.drop_flips, c.shuffle_flips)) << c.id;
  }
}

TEST(ScoreDataset, ShapeMismatchIsDimensionError) {
  const auto model = corner_classifier();
  const auto data = ts::random_dataset(2, 2, {1, 8, 8}, 3);
  EXPECT_THROW(pg::score_dataset(model, data, small_profile()), pg::DimensionError);
}

TEST(EarlyExit, SameDecisionsWithPartialCounts) {
  const auto model = quadrant_classifier();
  auto profile = small_profile();
  profile.k_drop = 1;
  profile.k_shuffle = 6;
  const auto data = ts::random_dataset(40, 4, kShape, 8);
  const auto full = pg::detect_dataset(model, data, profile);
  profile.early_exit = true;
  const auto counts = pg::score_dataset(model, data, profile);
  const auto fast = pg::decide_all(counts, profile);
  std::size_t truncated = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(fast[i].decision, full[i].decision) << i;
    truncated += counts[i].truncated;
  }
  EXPECT_GT(truncated, 0u);
}

TEST(Detect, NeedsThresholds) {
  const auto model = corner_classifier();
  EXPECT_THROW(pg::detect(model, dark_with_corner(), 0, small_profile()), pg::ConfigError);
  const auto v = pg::detect(model, dark_with_corner(), 0, pg::no_clean_data_profile(8));
  EXPECT_EQ(v.k_shuffle, 8u);
}

TEST(DetectionProfile, JsonRoundTripAndValidation) {
  auto p = small_profile();
  p.k_drop = 2;
  const nlohmann::json j = p;
  const auto back = j.get<pg::DetectionProfile>();
  EXPECT_EQ(back.k_drop, p.k_drop);
  EXPECT_FALSE(back.k_shuffle.has_value());
  EXPECT_EQ(back.seed, 77u);
  p.drop_count = 17;
  EXPECT_THROW(p.validate(), pg::ConfigError);
}

TEST(VerdictCsv, RoundTrip) {
  ts::TempDir dir;
  std::vector<pg::Verdict> verdicts;
  for (std::size_t i = 0; i < 5; ++i) {
    pg::FlipCounts c;
    c.id = 100 + i;
    c.drop_flips = i;
    c.shuffle_flips = 10 - i;
    verdicts.push_back(pg::decide(c, 2, 8));
  }
  pg::write_verdicts_csv(dir / "v.csv", verdicts);
  EXPECT_EQ(ts::read_text(dir / "v.csv").substr(0, 33), "id,F_d,F_s,k_d,k_s,decision,rule\n");
  const auto back = pg::read_verdicts_csv(dir / "v.csv");
  ASSERT_EQ(back.size(), verdicts.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, verdicts[i].id);
    EXPECT_EQ(back[i].drop_flips, verdicts[i].drop_flips);
    EXPECT_EQ(back[i].shuffle_flips, verdicts[i].shuffle_flips);
    EXPECT_EQ(back[i].decision, verdicts[i].decision);
    EXPECT_EQ(back[i].rule, verdicts[i].rule);
  }
}

TEST(VerdictCsv, MalformedLineRejected) {
  ts::TempDir dir;
  {
    std::ofstream out(dir / "v.csv");
    out << "id,F_d,F_s,k_d,k_s,decision,rule\n1,2,3,4,5,maybe,none\n";
  }
  EXPECT_THROW(pg::read_verdicts_csv(dir / "v.csv"), pg::FormatError);
}

// Expected values from scipy.stats.mannwhitneyu(x, y, alternative='greater',
// method='asymptotic', use_continuity=True).
TEST(MannWhitney, MatchesReferenceValues) {
  const std::vector<double> x{3, 5, 5, 2, 8, 4, 6, 5};
  const std::vector<double> y{1, 2, 2, 0, 3, 5, 1, 0, 2};
  const auto r = pg::mann_whitney_greater(x, y);
  EXPECT_DOUBLE_EQ(r.u, 64.5);
  EXPECT_NEAR(r.p_value, 0.0031371169249193305, 1e-12);

  const std::vector<double> a{0, 0, 1, 0, 2};
  const std::vector<double> b{0, 0, 0, 0, 0, 1};
  const auto r2 = pg::mann_whitney_greater(a, b);
  EXPECT_DOUBLE_EQ(r2.u, 19.0);
  EXPECT_NEAR(r2.p_value, 0.20732436651360375, 1e-12);
}

TEST(MannWhitney, DegenerateInputs) {
  const std::vector<double> same{1, 1, 1};
  EXPECT_DOUBLE_EQ(pg::mann_whitney_greater(same, same).p_value, 1.0);
  EXPECT_THROW(pg::mann_whitney_greater({}, same), pg::InputError);
}

TEST(Decide, LooserThresholdsNeverShrinkTheFlaggedSet) {
  pg::Rng gen(31);
  const std::size_t trials = 16;
  std::vector<pg::FlipCounts> counts(60);
  for (auto& c : counts) {
    c.drop_flips = pg::uniform_below(gen, trials + 1);
    c.shuffle_flips = pg::uniform_below(gen, trials + 1);
  }
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t kd = pg::uniform_below(gen, trials + 1);
    const std::size_t ks = pg::uniform_below(gen, trials + 1);
    const std::size_t kd_low = pg::uniform_below(gen, kd + 1);
    const std::size_t ks_high = ks + pg::uniform_below(gen, trials + 1 - ks);
    for (const auto& c : counts) {
      if (pg::decide(c, kd, ks).flagged()) {
        EXPECT_TRUE(pg::decide(c, kd_low, ks_high).flagged());
      }
    }
  }
}

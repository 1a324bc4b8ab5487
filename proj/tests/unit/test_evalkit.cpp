#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "patchguard/errors.hpp"
#include "patchguard/evalkit.hpp"
#include "patchguard/poison.hpp"
#include "test_support.hpp"

namespace pg = patchguard;
namespace ts = testing_support;

namespace {

const pg::Shape kShape{1, 8, 8};
constexpr std::size_t kClasses = 4;

// Images are constant planes whose brightness encodes the label.
pg::LabeledDataset coded_dataset(std::size_t n) {
  pg::LabeledDataset d;
  d.num_classes = kClasses;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % kClasses;
    d.images.emplace_back(kShape, (static_cast<float>(label) + 0.5f) / kClasses);
    d.labels.push_back(label);
    d.ids.push_back(i);
  }
  return d;
}

std::size_t decode(const pg::Image& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  const auto k = static_cast<std::size_t>(s / static_cast<double>(x.size()) * kClasses);
  return std::min(k, kClasses - 1);
}

// Trigger = bright top-left pixel; the model answers 0 whenever it sees it.
ts::FnClassifier backdoored() {
  return ts::FnClassifier(kClasses, kShape, [](const pg::Image& x) -> std::size_t {
    return x.at(0, 0, 0) == 1.0f ? 0 : decode(x);
  });
}

pg::MetricsRecord sample_record() {
  pg::MetricsRecord r;
  r.experiment_id = "exp";
  r.model = "vit";
  r.attack = "patch";
  r.transform = "drop";
  r.param = 6;
  r.seed = 3;
  r.clean_acc = 0.1 + 0.2;
  r.asr = 1.0 / 3.0;
  r.n_clean = 10;
  r.n_backdoor = 4;
  r.fd_var = 1e-17;
  return r;
}

}  // namespace

TEST(CleanAccuracy, StubClassifiers) {
  const auto d = coded_dataset(10);
  const ts::FnClassifier perfect(kClasses, kShape, decode);
  EXPECT_DOUBLE_EQ(pg::clean_accuracy(perfect, d), 1.0);
  const ts::FnClassifier anti(kClasses, kShape,
                              [](const pg::Image& x) { return (decode(x) + 1) % kClasses; });
  EXPECT_DOUBLE_EQ(pg::clean_accuracy(anti, d), 0.0);
  // Wrong on ids 7, 8, 9 only.
  auto partial = d;
  for (std::size_t i = 7; i < 10; ++i) partial.labels[i] = (partial.labels[i] + 1) % kClasses;
  EXPECT_DOUBLE_EQ(pg::clean_accuracy(perfect, partial), 0.7);
  pg::LabeledDataset empty;
  EXPECT_THROW(pg::clean_accuracy(perfect, empty), pg::InputError);
}

TEST(AttackSuccessRate, CountsOnlyNonTargetSamples) {
  const auto d = coded_dataset(20);
  const auto trigger = pg::make_single_pixel_trigger(kShape, 0, 0, {1.0f}, 0);
  EXPECT_DOUBLE_EQ(pg::attack_success_rate(backdoored(), d, trigger), 1.0);
  const ts::FnClassifier clean(kClasses, kShape, decode);
  EXPECT_DOUBLE_EQ(pg::attack_success_rate(clean, d, trigger), 0.0);
  const ts::FnClassifier always_target(kClasses, kShape, [](const pg::Image&) { return 0u; });
  EXPECT_DOUBLE_EQ(pg::attack_success_rate(always_target, d, trigger), 1.0);
}

TEST(AttackSuccessRate, AllTargetSetIsInputError) {
  auto d = coded_dataset(8);
  for (auto& l : d.labels) l = 0;
  const auto trigger = pg::make_single_pixel_trigger(kShape, 0, 0, {1.0f}, 0);
  EXPECT_THROW(pg::attack_success_rate(backdoored(), d, trigger), pg::InputError);
}

TEST(TprTnr, Fixture) {
  // 4 poisoned (3 flagged), 6 clean (1 flagged).
  const std::vector<bool> poisoned{true, true, true, true, false, false, false, false, false, false};
  const std::vector<bool> flagged{true, true, false, true, true, false, false, false, false, false};
  std::vector<pg::Verdict> verdicts(10);
  for (std::size_t i = 0; i < 10; ++i) {
    verdicts[i].id = i;
    verdicts[i].decision = flagged[i] ? pg::Decision::backdoor : pg::Decision::clean;
  }
  const auto r = pg::tpr_tnr(verdicts, poisoned);
  EXPECT_DOUBLE_EQ(*r.tpr, 0.75);
  EXPECT_DOUBLE_EQ(*r.tnr, 5.0 / 6.0);
  EXPECT_EQ(r.n_poisoned, 4u);
  EXPECT_EQ(r.n_clean, 6u);

  const auto none = pg::tpr_tnr(std::span(verdicts).subspan(4),
                                std::vector<bool>(poisoned.begin() + 4, poisoned.end()));
  EXPECT_FALSE(none.tpr.has_value());
  EXPECT_TRUE(none.tnr.has_value());
  EXPECT_THROW(pg::tpr_tnr(verdicts, std::vector<bool>(3, true)), pg::InputError);
}

TEST(TprTnr, AgreesWithBruteForceRecount) {
  pg::Rng gen(12);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + pg::uniform_below(gen, 40);
    std::vector<bool> poisoned(n);
    std::vector<pg::Verdict> verdicts(n);
    std::size_t tp = 0, tn = 0, p = 0;
    for (std::size_t i = 0; i < n; ++i) {
      poisoned[i] = pg::uniform_below(gen, 2) == 1;
      const bool flag = pg::uniform_below(gen, 2) == 1;
      verdicts[i].decision = flag ? pg::Decision::backdoor : pg::Decision::clean;
      p += poisoned[i];
      tp += poisoned[i] && flag;
      tn += !poisoned[i] && !flag;
    }
    const auto r = pg::tpr_tnr(verdicts, poisoned);
    if (p > 0) EXPECT_DOUBLE_EQ(*r.tpr, static_cast<double>(tp) / static_cast<double>(p));
    else EXPECT_FALSE(r.tpr.has_value());
    if (p < n) EXPECT_DOUBLE_EQ(*r.tnr, static_cast<double>(tn) / static_cast<double>(n - p));
    else EXPECT_FALSE(r.tnr.has_value());
  }
}

TEST(SummarizeFlips, PopulationVariance) {
  std::vector<pg::FlipCounts> counts(4);
  const std::size_t drops[] = {0, 2, 4, 6};
  for (std::size_t i = 0; i < 4; ++i) {
    counts[i].drop_flips = drops[i];
    counts[i].shuffle_flips = 3;
  }
  const auto s = pg::summarize_flips(counts);
  EXPECT_DOUBLE_EQ(s.fd_mean, 3.0);
  EXPECT_DOUBLE_EQ(s.fd_var, 5.0);
  EXPECT_DOUBLE_EQ(s.fs_mean, 3.0);
  EXPECT_DOUBLE_EQ(s.fs_var, 0.0);
}

TEST(Sweeps, EndpointsMatchUntransformedMetrics) {
  const auto d = coded_dataset(40);
  const auto trigger = pg::make_single_pixel_trigger(kShape, 0, 0, {1.0f}, 0);
  const auto triggered = pg::triggered_view(d, trigger);
  const auto model = backdoored();
  const std::vector<std::size_t> counts{0};
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto drop = pg::sweep_drop(model, d, triggered, {4}, counts, seeds);
  ASSERT_EQ(drop.size(), 2u);
  for (const auto& r : drop) {
    EXPECT_EQ(r.transform, "drop");
    EXPECT_DOUBLE_EQ(*r.clean_acc, pg::clean_accuracy(model, d));
    EXPECT_DOUBLE_EQ(*r.asr, 1.0);
    EXPECT_EQ(r.n_clean, 40u);
    EXPECT_EQ(r.n_backdoor, triggered.size());
  }
  const std::vector<std::size_t> sides{1};
  const auto shuffle = pg::sweep_shuffle(model, d, triggered, sides, seeds);
  for (const auto& r : shuffle) {
    EXPECT_DOUBLE_EQ(*r.clean_acc, 1.0);
    EXPECT_DOUBLE_EQ(*r.asr, 1.0);
  }
}

TEST(Sweeps, SortedByParamThenSeedAndThreadIndependent) {
  const auto d = coded_dataset(24);
  const pg::LabeledDataset no_trigger;
  const auto model = backdoored();
  const std::vector<std::size_t> counts{8, 0, 4};
  const std::vector<std::uint64_t> seeds{5, 1};
  const auto a = pg::sweep_drop(model, d, no_trigger, {4}, counts, seeds, {}, 1);
  const auto b = pg::sweep_drop(model, d, no_trigger, {4}, counts, seeds, {}, 4);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a[0].param, 0.0);
  EXPECT_EQ(a[0].seed, 1u);
  EXPECT_EQ(a[1].seed, 5u);
  EXPECT_EQ(a[5].param, 8.0);
  for (const auto& r : a) EXPECT_FALSE(r.asr.has_value());
}

TEST(SummarizeSweep, MeanAndVarianceAcrossSeeds) {
  std::vector<pg::MetricsRecord> rows(3);
  rows[0].param = 2;
  rows[0].clean_acc = 0.5;
  rows[1].param = 2;
  rows[1].clean_acc = 1.0;
  rows[2].param = 4;
  rows[2].clean_acc = 0.25;
  rows[2].asr = 0.75;
  const auto pts = pg::summarize_sweep(rows);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].seeds, 2u);
  EXPECT_DOUBLE_EQ(*pts[0].clean_acc_mean, 0.75);
  EXPECT_DOUBLE_EQ(*pts[0].clean_acc_var, 0.0625);
  EXPECT_FALSE(pts[0].asr_mean.has_value());
  EXPECT_DOUBLE_EQ(*pts[1].asr_mean, 0.75);
}

TEST(Report, ColumnOrder) {
  const std::vector<std::string> expected{
      "experiment_id", "model", "attack", "transform", "param", "seed", "clean_acc", "asr",
      "tpr",           "tnr",   "n_clean", "n_backdoor", "fd_mean", "fd_var", "fs_mean", "fs_var"};
  EXPECT_EQ(pg::report_columns(), expected);
}

TEST(Report, CsvRoundTripIsExact) {
  ts::TempDir dir;
  auto second = sample_record();
  second.transform = "detect:clean";
  second.asr.reset();
  second.tnr = 0.87;
  const std::vector<pg::MetricsRecord> rows{sample_record(), second};
  pg::emit_report(rows, dir / "r.csv", pg::ReportFormat::csv);
  EXPECT_EQ(pg::read_report_csv(dir / "r.csv"), rows);
}

TEST(Report, EmptyRecordsGiveHeaderOnly) {
  ts::TempDir dir;
  pg::emit_report({}, dir / "r.csv", pg::ReportFormat::csv);
  std::string header;
  for (const auto& c : pg::report_columns()) header += (header.empty() ? "" : ",") + c;
  EXPECT_EQ(ts::read_text(dir / "r.csv"), header + "\n");
  EXPECT_TRUE(pg::read_report_csv(dir / "r.csv").empty());
}

TEST(Report, JsonCarriesConventionAndConfig) {
  ts::TempDir dir;
  const std::vector<pg::MetricsRecord> rows{sample_record()};
  pg::emit_report(rows, dir / "r.json", pg::ReportFormat::json, {{"name", "x"}});
  const auto j = nlohmann::json::parse(ts::read_text(dir / "r.json"));
  EXPECT_EQ(j.at("asr_convention"), pg::kAsrConvention);
  EXPECT_EQ(j.at("config").at("name"), "x");
  EXPECT_EQ(j.at("records").at(0).get<pg::MetricsRecord>(), rows[0]);
  EXPECT_TRUE(j.at("records").at(0).at("tpr").is_null());
}

TEST(Report, RejectsTagsThatBreakCsv) {
  ts::TempDir dir;
  auto r = sample_record();
  r.experiment_id = "a,b";
  const std::vector<pg::MetricsRecord> rows{r};
  EXPECT_ANY_THROW(pg::emit_report(rows, dir / "r.csv", pg::ReportFormat::csv));
}

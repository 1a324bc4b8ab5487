#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

#include "patchguard/dataset.hpp"
#include "patchguard/errors.hpp"
#include "test_support.hpp"

namespace pg = patchguard;
namespace ts = testing_support;

namespace {

// 2 images of 1×2×3, ubyte.
std::vector<unsigned char> tiny_ubyte_images() {
  std::vector<unsigned char> b;
  ts::push_be32(b, 0x00000803);
  ts::push_be32(b, 2);
  ts::push_be32(b, 2);
  ts::push_be32(b, 3);
  for (unsigned char v : {0, 51, 102, 153, 204, 255}) b.push_back(v);
  for (unsigned char v : {255, 0, 255, 0, 255, 0}) b.push_back(v);
  return b;
}

std::vector<unsigned char> tiny_labels(std::vector<unsigned char> labels) {
  std::vector<unsigned char> b;
  ts::push_be32(b, 0x00000801);
  ts::push_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

template <class F>
std::string format_error_message(F&& f) {
  try {
    f();
  } catch (const pg::FormatError& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected FormatError";
  return {};
}

}  // namespace

TEST(Idx, HandWrittenUbyteFile) {
  ts::TempDir dir;
  ts::write_bytes(dir / "img", tiny_ubyte_images());
  ts::write_bytes(dir / "lbl", tiny_labels({1, 0}));
  const auto d = pg::load_idx(dir / "img", dir / "lbl");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.image_shape(), (pg::Shape{1, 2, 3}));
  EXPECT_EQ(d.num_classes, 2u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(d.ids, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_FLOAT_EQ(d.images[0].at(0, 0, 1), 51.0f / 255.0f);
  EXPECT_FLOAT_EQ(d.images[0].at(0, 1, 2), 1.0f);
  EXPECT_FLOAT_EQ(d.images[1].at(0, 0, 1), 0.0f);
}

TEST(Idx, FloatRoundTripIsExact) {
  ts::TempDir dir;
  const auto d = ts::random_dataset(5, 3, {3, 4, 4}, 9);
  pg::write_idx_images(dir / "img", d.images, d.image_shape());
  pg::write_idx_labels(dir / "lbl", d.labels, d.num_classes);
  const auto back = pg::load_idx(dir / "img", dir / "lbl", 3);
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back.images[i], d.images[i]);
  EXPECT_EQ(back.labels, d.labels);
}

TEST(Idx, BadMagicReportsOffsetZero) {
  ts::TempDir dir;
  auto bytes = tiny_ubyte_images();
  bytes[3] = 0x07;
  ts::write_bytes(dir / "img", bytes);
  ts::write_bytes(dir / "lbl", tiny_labels({1, 0}));
  const auto msg = format_error_message([&] { pg::load_idx(dir / "img", dir / "lbl"); });
  EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset 0"), std::string::npos) << msg;
}

TEST(Idx, TruncatedFileReportsOffset) {
  ts::TempDir dir;
  auto bytes = tiny_ubyte_images();
  bytes.resize(bytes.size() - 2);
  ts::write_bytes(dir / "img", bytes);
  ts::write_bytes(dir / "lbl", tiny_labels({1, 0}));
  const auto msg = format_error_message([&] { pg::load_idx(dir / "img", dir / "lbl"); });
  // Header is 16 bytes, first image 6; the second image starts at 22.
  EXPECT_NE(msg.find("truncated at byte offset 22"), std::string::npos) << msg;
}

TEST(Idx, TrailingBytesRejected) {
  ts::TempDir dir;
  auto bytes = tiny_ubyte_images();
  bytes.push_back(7);
  ts::write_bytes(dir / "img", bytes);
  ts::write_bytes(dir / "lbl", tiny_labels({1, 0}));
  const auto msg = format_error_message([&] { pg::load_idx(dir / "img", dir / "lbl"); });
  EXPECT_NE(msg.find("trailing"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset 28"), std::string::npos) << msg;
}

TEST(Idx, CountMismatchRejected) {
  ts::TempDir dir;
  ts::write_bytes(dir / "img", tiny_ubyte_images());
  ts::write_bytes(dir / "lbl", tiny_labels({1, 0, 1}));
  EXPECT_THROW(pg::load_idx(dir / "img", dir / "lbl"), pg::FormatError);
}

TEST(Idx, LabelOutsideDeclaredClasses) {
  ts::TempDir dir;
  ts::write_bytes(dir / "img", tiny_ubyte_images());
  ts::write_bytes(dir / "lbl", tiny_labels({1, 5}));
  const auto msg = format_error_message([&] { pg::load_idx(dir / "img", dir / "lbl", 3); });
  EXPECT_NE(msg.find("byte offset 9"), std::string::npos) << msg;
}

TEST(Cifar, ParsesRecordsAndSkipsEmptyFiles) {
  ts::TempDir dir;
  std::vector<unsigned char> batch;
  for (unsigned char label : {3, 9}) {
    batch.push_back(label);
    for (std::size_t i = 0; i < 3072; ++i) batch.push_back(static_cast<unsigned char>(i % 256));
  }
  ts::write_bytes(dir / "a.bin", batch);
  ts::write_bytes(dir / "empty.bin", {});
  ts::write_bytes(dir / "b.bin", std::vector<unsigned char>(batch.begin(), batch.begin() + 3073));
  const std::vector<std::filesystem::path> files{dir / "a.bin", dir / "empty.bin", dir / "b.bin"};
  const auto d = pg::load_cifar_binary(files);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{3, 9, 3}));
  EXPECT_EQ(d.ids, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(d.image_shape(), (pg::Shape{3, 32, 32}));
  // Pixel 1024 is the first green value.
  EXPECT_FLOAT_EQ(d.images[0].at(1, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(d.images[0].at(0, 0, 5), 5.0f / 255.0f);
  EXPECT_NO_THROW(d.validate());
}

TEST(Cifar, PartialRecordRejected) {
  ts::TempDir dir;
  ts::write_bytes(dir / "a.bin", std::vector<unsigned char>(3073 + 10, 0));
  const std::vector<std::filesystem::path> files{dir / "a.bin"};
  const auto msg = format_error_message([&] { pg::load_cifar_binary(files); });
  EXPECT_NE(msg.find("byte offset 3073"), std::string::npos) << msg;
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = pg::gen_synthetic(4, 5, 16, 11);
  const auto b = pg::gen_synthetic(4, 5, 16, 11);
  const auto c = pg::gen_synthetic(4, 5, 16, 12);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
  EXPECT_EQ(a.size(), 20u);
  EXPECT_NO_THROW(a.validate());
  for (const auto& img : a.images) {
    for (float v : img.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Synthetic, BalancedClasses) {
  const auto d = pg::gen_synthetic(5, 7, 16, 3);
  std::vector<std::size_t> counts(5, 0);
  for (auto l : d.labels) ++counts[l];
  for (auto c : counts) EXPECT_EQ(c, 7u);
}

TEST(Synthetic, ClassCodesShareAtMostOneCell) {
  const auto codes = pg::synthetic_class_cells(10);
  ASSERT_EQ(codes.size(), 10u);
  for (std::size_t a = 0; a < codes.size(); ++a) {
    EXPECT_EQ(std::set<std::size_t>(codes[a].begin(), codes[a].end()).size(), 4u);
    for (std::size_t b = a + 1; b < codes.size(); ++b) {
      std::size_t shared = 0;
      for (auto x : codes[a]) shared += std::count(codes[b].begin(), codes[b].end(), x);
      EXPECT_LE(shared, 1u) << a << " vs " << b;
    }
  }
}

TEST(Synthetic, RejectsBadGeometry) {
  EXPECT_THROW(pg::gen_synthetic(1, 5, 16, 0), pg::ConfigError);
  EXPECT_THROW(pg::gen_synthetic(4, 5, 10, 0), pg::ConfigError);
}

TEST(Split, SizesDisjointAndDeterministic) {
  const auto d = ts::random_dataset(103, 3, {1, 4, 4}, 5);
  const auto s = pg::split(d, {0.7, 0.1, 0.2}, 42);
  EXPECT_EQ(s.train.size(), 72u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 21u);
  std::set<std::uint64_t> ids;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    EXPECT_TRUE(std::is_sorted(part->ids.begin(), part->ids.end()));
    ids.insert(part->ids.begin(), part->ids.end());
  }
  EXPECT_EQ(ids.size(), 103u);
  EXPECT_EQ(s.train.split, "train");
  EXPECT_EQ(s.test.split, "test");

  const auto again = pg::split(d, {0.7, 0.1, 0.2}, 42);
  EXPECT_EQ(again.train.ids, s.train.ids);
  EXPECT_EQ(again.val.ids, s.val.ids);
  const auto other = pg::split(d, {0.7, 0.1, 0.2}, 43);
  EXPECT_NE(other.train.ids, s.train.ids);
}

TEST(Split, FractionsMustSumToOne) {
  const auto d = ts::random_dataset(10, 2, {1, 4, 4}, 5);
  EXPECT_THROW(pg::split(d, {0.5, 0.1, 0.1}, 1), pg::ConfigError);
  EXPECT_THROW(pg::split(d, {1.2, -0.1, -0.1}, 1), pg::ConfigError);
}

TEST(Normalization, PerChannelMeanAndStd) {
  pg::LabeledDataset d;
  d.num_classes = 2;
  // Channel 0 holds {0, 1} across the two 1×2 images; channel 1 is constant.
  d.images.push_back(pg::Image({2, 1, 2}, {0.0f, 0.0f, 0.5f, 0.5f}));
  d.images.push_back(pg::Image({2, 1, 2}, {1.0f, 1.0f, 0.5f, 0.5f}));
  d.labels = {0, 1};
  d.ids = {0, 1};
  const auto n = pg::compute_normalization(d);
  ASSERT_EQ(n.mean.size(), 2u);
  EXPECT_FLOAT_EQ(n.mean[0], 0.5f);
  EXPECT_FLOAT_EQ(n.stddev[0], 0.5f);
  EXPECT_FLOAT_EQ(n.mean[1], 0.5f);
  EXPECT_GT(n.stddev[1], 0.0f);
  EXPECT_LE(n.stddev[1], 1e-3f);
}

TEST(Validate, CatchesBrokenInvariants) {
  auto d = ts::random_dataset(4, 2, {1, 4, 4}, 1);
  d.ids[3] = 0;
  EXPECT_THROW(d.validate(), pg::InputError);
  d = ts::random_dataset(4, 2, {1, 4, 4}, 1);
  d.labels[0] = 2;
  EXPECT_THROW(d.validate(), pg::InputError);
  d = ts::random_dataset(4, 2, {1, 4, 4}, 1);
  d.images[1] = pg::Image({1, 4, 5});
  EXPECT_THROW(d.validate(), pg::InputError);
}

TEST(StoredDataset, RoundTripAndChecksums) {
  ts::TempDir dir;
  auto train = ts::random_dataset(6, 3, {3, 4, 4}, 1);
  train.split = "train";
  auto test = ts::random_dataset(4, 3, {3, 4, 4}, 2);
  test.split = "test";
  for (auto& id : test.ids) id += 100;
  const auto norm = pg::compute_normalization(train);
  const auto manifest =
      pg::write_dataset(dir.path(), {&train, &test}, {{"kind", "unit"}}, norm, 77);
  EXPECT_EQ(manifest.total_size(), 10u);

  const auto stored = pg::read_dataset(dir.path());
  EXPECT_EQ(stored.at("train").checksum(), train.checksum());
  EXPECT_EQ(stored.at("test").checksum(), test.checksum());
  EXPECT_EQ(stored.manifest.generation_seed, std::optional<std::uint64_t>(77));
  EXPECT_EQ(stored.manifest.normalization.mean, norm.mean);
  EXPECT_THROW(stored.at("val"), pg::InputError);
}

TEST(StoredDataset, TamperedFileFailsChecksum) {
  ts::TempDir dir;
  auto train = ts::random_dataset(6, 3, {3, 4, 4}, 1);
  train.split = "train";
  const auto manifest = pg::write_dataset(dir.path(), {&train}, {}, {});
  const auto file = dir.path() / manifest.splits.at(0).files.at("images");
  auto bytes = ts::read_bytes(file);
  bytes.back() ^= 0x01;
  ts::write_bytes(file, bytes);
  const auto msg = format_error_message([&] { pg::read_dataset(dir.path()); });
  EXPECT_NE(msg.find("checksum"), std::string::npos) << msg;
}

TEST(Split, HundredSamplesEightyTenTen) {
  const auto d = ts::random_dataset(100, 2, {1, 4, 4}, 5);
  const auto s = pg::split(d, {0.8, 0.1, 0.1}, 1);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
}

TEST(Split, AllToTrainKeepsInput) {
  const auto d = ts::random_dataset(20, 2, {1, 4, 4}, 5);
  const auto s = pg::split(d, {1.0, 0.0, 0.0}, 1);
  EXPECT_EQ(s.train.ids, d.ids);
  EXPECT_EQ(s.train.labels, d.labels);
  EXPECT_TRUE(s.val.empty());
  EXPECT_TRUE(s.test.empty());
}

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <vector>

#include "patchguard/checkpoint.hpp"
#include "patchguard/cnn.hpp"
#include "patchguard/dataset.hpp"
#include "patchguard/errors.hpp"
#include "patchguard/gradcheck.hpp"
#include "patchguard/train.hpp"
#include "patchguard/vit.hpp"
#include "test_support.hpp"

namespace pg = patchguard;
namespace ts = testing_support;

namespace {

pg::TinyViTConfig small_vit() {
  pg::TinyViTConfig c;
  c.image_shape = {3, 8, 8};
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 4;
  c.init_seed = 3;
  return c;
}

pg::TinyCNNConfig small_cnn() {
  pg::TinyCNNConfig c;
  c.image_shape = {1, 8, 8};
  c.channels = {4, 8};
  c.kernel_sizes = {3, 3};
  c.pool = {true, true};
  c.num_classes = 3;
  c.init_seed = 5;
  return c;
}

pg::Tensor<double> to_double(const pg::Image& x) { return x.cast<double>(); }

}  // namespace

TEST(TinyViT, SequenceLengthAndLogitShape) {
  pg::TinyViTConfig c;
  c.image_shape = {3, 32, 32};
  c.patch_size = 4;
  EXPECT_EQ(c.sequence_length(), 65u);
  c.embed_dim = 16;
  c.depth = 1;
  c.heads = 2;
  const pg::TinyViT<float> vit(c);
  const auto logits = vit.forward(ts::random_image({3, 32, 32}, 1));
  EXPECT_EQ(logits.shape(), (pg::Shape{10}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(TinyViT, PatchifyRasterOrder) {
  const pg::TinyViT<float> vit(small_vit());
  pg::Image x({3, 8, 8});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i);
  const auto rows = vit.patchify(x);
  EXPECT_EQ(rows.shape(), (pg::Shape{4, 48}));
  // Patch 1 is the top-right 4×4 block; its first element is channel 0, (0, 4).
  EXPECT_EQ(rows.at(1, 0), x.at(0, 0, 4));
  // Element 16 of a row starts channel 1.
  EXPECT_EQ(rows.at(2, 16), x.at(1, 4, 0));
}

TEST(TinyViT, ParameterCountByHand) {
  const pg::TinyViT<float> vit(small_vit());
  const std::size_t d = 8, patch_dim = 3 * 4 * 4, tokens = 5, hidden = 16;
  const std::size_t embed = patch_dim * d + d + d + tokens * d;
  const std::size_t block = 4 * d + 4 * (d * d + d) + (d * hidden + hidden) + (hidden * d + d);
  const std::size_t head = 2 * d + d * 4 + 4;
  EXPECT_EQ(vit.parameter_count(), embed + 2 * block + head);
}

TEST(TinyViT, InvalidGeometryRejected) {
  auto c = small_vit();
  c.patch_size = 3;
  EXPECT_THROW(pg::TinyViT<float>{c}, pg::ConfigError);
  c = small_vit();
  c.heads = 3;
  EXPECT_THROW(pg::TinyViT<float>{c}, pg::ConfigError);
}

TEST(TinyCNN, ParameterCountByHand) {
  const pg::TinyCNN<float> cnn(small_cnn());
  // conv 1→4 (3×3) + bias, conv 4→8 (3×3) + bias, two pools leave 8×2×2.
  const std::size_t conv = (4 * 1 * 9 + 4) + (8 * 4 * 9 + 8);
  const std::size_t head = 8 * 2 * 2 * 3 + 3;
  EXPECT_EQ(cnn.parameter_count(), conv + head);
  EXPECT_EQ(cnn.parameter_count(), 435u);
  EXPECT_EQ(small_cnn().feature_shape(), (pg::Shape{8, 2, 2}));
}

TEST(Network, PredictIsArgmaxOfLogits) {
  const pg::TinyViT<float> vit(small_vit());
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = ts::random_image({3, 8, 8}, s);
    const auto l = vit.logits(x);
    const auto best = static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());
    EXPECT_EQ(vit.predict(x), best);
  }
}

TEST(Network, BatchInvariance) {
  const pg::TinyViT<float> vit(small_vit());
  std::vector<pg::Image> batch;
  for (std::uint64_t s = 0; s < 9; ++s) batch.push_back(ts::random_image({3, 8, 8}, s));
  const auto all = pg::predict_batch(vit, batch, 3);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto single = pg::predict_batch(vit, std::span(&batch[i], 1));
    EXPECT_EQ(single.logits[0], all.logits[i]);
    EXPECT_EQ(single.labels[0], all.labels[i]);
  }
}

TEST(Network, MakeNetworkFromJson) {
  const nlohmann::json vit_json = small_vit();
  const auto vit = pg::make_network<float>(vit_json);
  EXPECT_EQ(vit->architecture(), "vit");
  EXPECT_EQ(vit->config_json(), vit_json);
  const nlohmann::json cnn_json = small_cnn();
  EXPECT_EQ(pg::make_network<float>(cnn_json)->architecture(), "cnn");
  EXPECT_THROW(pg::make_network<float>({{"arch", "mlp"}}), pg::ConfigError);
}

TEST(GradCheck, EndToEndViT) {
  pg::TinyViT<double> vit(small_vit());
  const auto x = to_double(ts::random_image({3, 8, 8}, 4));
  const auto report = pg::model_grad_check(vit, x, 2, 12, 99, {.step = 1e-5, .tolerance = 1e-3});
  EXPECT_TRUE(report.passed) << report.failure << " worst " << report.worst_location << " "
                             << report.max_relative_error;
  EXPECT_EQ(report.checked, 12u);
}

TEST(GradCheck, EndToEndCNN) {
  auto cfg = small_cnn();
  pg::TinyCNN<double> cnn(cfg);
  const auto x = to_double(ts::random_image({1, 8, 8}, 4));
  const auto report = pg::model_grad_check(cnn, x, 1, 12, 7, {.step = 1e-5, .tolerance = 1e-3});
  EXPECT_TRUE(report.passed) << report.failure << " worst " << report.worst_location << " "
                             << report.max_relative_error;
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  ts::TempDir dir;
  const pg::TinyViT<float> vit(small_vit());
  pg::TrainingMetadata meta;
  meta.epochs = 3;
  meta.seed = 42;
  meta.dataset_checksum = "abc";
  pg::save_checkpoint(dir / "m.ckpt", vit, meta);
  const auto ck = pg::load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.metadata.epochs, 3u);
  EXPECT_EQ(ck.metadata.seed, 42u);
  EXPECT_EQ(ck.metadata.dataset_checksum, "abc");
  EXPECT_EQ(ck.model_config, vit.config_json());
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto x = ts::random_image({3, 8, 8}, s);
    EXPECT_EQ(ck.model->logits(x), vit.logits(x));
  }
}

TEST(Checkpoint, CorruptedMagicRejected) {
  ts::TempDir dir;
  pg::save_checkpoint(dir / "m.ckpt", pg::TinyCNN<float>(small_cnn()));
  auto bytes = ts::read_bytes(dir / "m.ckpt");
  bytes[0] = 'X';
  ts::write_bytes(dir / "m.ckpt", bytes);
  try {
    pg::load_checkpoint(dir / "m.ckpt");
    FAIL() << "expected FormatError";
  } catch (const pg::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, VersionMismatchRejected) {
  ts::TempDir dir;
  pg::save_checkpoint(dir / "m.ckpt", pg::TinyCNN<float>(small_cnn()));
  auto bytes = ts::read_bytes(dir / "m.ckpt");
  bytes[8] = static_cast<unsigned char>(pg::kCheckpointVersion + 1);
  ts::write_bytes(dir / "m.ckpt", bytes);
  try {
    pg::load_checkpoint(dir / "m.ckpt");
    FAIL() << "expected FormatError";
  } catch (const pg::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, TruncationAndTrailingBytesRejected) {
  ts::TempDir dir;
  pg::save_checkpoint(dir / "m.ckpt", pg::TinyCNN<float>(small_cnn()));
  const auto bytes = ts::read_bytes(dir / "m.ckpt");
  ts::write_bytes(dir / "short.ckpt", std::vector<unsigned char>(bytes.begin(), bytes.end() - 3));
  EXPECT_THROW(pg::load_checkpoint(dir / "short.ckpt"), pg::FormatError);
  auto longer = bytes;
  longer.push_back(0);
  ts::write_bytes(dir / "long.ckpt", longer);
  EXPECT_THROW(pg::load_checkpoint(dir / "long.ckpt"), pg::FormatError);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  pg::TinyCNN<float> cnn(small_cnn());
  const pg::TinyCNN<float> reference(small_cnn());
  const auto data = ts::random_dataset(12, 3, {1, 8, 8}, 2);
  pg::TrainOptions opt;
  opt.epochs = 0;
  const auto history = pg::train(cnn, data, opt);
  EXPECT_TRUE(history.empty());
  for (std::size_t i = 0; i < cnn.parameters().size(); ++i) {
    EXPECT_EQ(cnn.parameters()[i].value, reference.parameters()[i].value);
  }
}

TEST(Train, DeterministicAcrossThreadCounts) {
  const auto data = ts::random_dataset(24, 3, {1, 8, 8}, 2);
  pg::TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 8;
  opt.seed = 11;
  pg::TinyCNN<float> a(small_cnn()), b(small_cnn());
  opt.threads = 1;
  const auto ha = pg::train(a, data, opt);
  opt.threads = 3;
  const auto hb = pg::train(b, data, opt);
  ASSERT_EQ(ha.size(), 2u);
  EXPECT_EQ(ha[1].train_loss, hb[1].train_loss);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  }
}

TEST(Train, ViTLearnsFourClassSynthetic) {
  const auto data = pg::gen_synthetic(4, 60, 16, 21);
  const auto parts = pg::split(data, {0.75, 0.0, 0.25}, 3);
  pg::TinyViTConfig cfg;
  cfg.image_shape = {3, 16, 16};
  cfg.patch_size = 4;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.num_classes = 4;
  cfg.init_seed = 1;
  pg::TinyViT<float> vit(cfg);
  pg::TrainOptions opt;
  opt.epochs = 30;
  opt.batch_size = 16;
  opt.adam.lr = 0.003;
  opt.seed = 4;
  opt.threads = 2;
  pg::train(vit, parts.train, opt);
  EXPECT_GE(pg::accuracy(vit, parts.test), 0.95);
}

TEST(Train, CNNLearnsFourClassSynthetic) {
  const auto data = pg::gen_synthetic(4, 60, 16, 21, 1);
  const auto parts = pg::split(data, {0.75, 0.0, 0.25}, 3);
  pg::TinyCNNConfig cfg;
  cfg.image_shape = {1, 16, 16};
  cfg.channels = {8, 16};
  cfg.kernel_sizes = {3, 3};
  cfg.pool = {true, true};
  cfg.num_classes = 4;
  cfg.init_seed = 1;
  pg::TinyCNN<float> cnn(cfg);
  pg::TrainOptions opt;
  opt.epochs = 30;
  opt.batch_size = 16;
  opt.adam.lr = 0.003;
  opt.seed = 4;
  opt.threads = 2;
  pg::train(cnn, parts.train, opt);
  EXPECT_GE(pg::accuracy(cnn, parts.test), 0.95);
}

TEST(Train, NonFiniteInputRaisesTrainingError) {
  auto data = ts::random_dataset(8, 4, {3, 8, 8}, 2);
  data.images[5][3] = std::numeric_limits<float>::quiet_NaN();
  pg::TinyViT<float> vit(small_vit());
  pg::TrainOptions opt;
  opt.epochs = 1;
  opt.batch_size = 4;
  try {
    pg::train(vit, data, opt);
    FAIL() << "expected TrainingError";
  } catch (const pg::TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

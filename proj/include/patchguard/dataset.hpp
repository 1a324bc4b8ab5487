#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/model.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

/// Images in raw [0,1] pixel space with labels and stable per-sample ids.
struct LabeledDataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> ids;
  std::size_t num_classes = 0;
  std::string split = "all";

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  /// Shape shared by every image; empty for an empty dataset.
  Shape image_shape() const;
  /// Throws InputError when shapes, labels or ids break the invariants.
  void validate() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  /// SHA-256 over shapes, pixel bytes, labels and ids.
  std::string checksum() const;
};

/// Reads an IDX image file and its label file. Images may be unsigned-byte
/// (magic 0x00000803 N×H×W or 0x00000804 N×C×H×W, scaled by 1/255) or float32
/// (0x00000D03 / 0x00000D04, stored as is); labels are unsigned-byte
/// (0x00000801) or int32 (0x00000C01). Ids are the record indices.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path,
                        std::optional<std::size_t> num_classes = std::nullopt);

/// Reads CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
/// (R, G, B planes of 32×32). Ids continue across files.
LabeledDataset load_cifar_binary(std::span<const std::filesystem::path> paths);

/// Class-conditional renderings on a 4×4 cell layout. Each class owns a fixed
/// set of four cells (any two classes share at most one); every sample draws
/// a shape (square, disk, plus or diamond) of random color and size in each of
/// its class's cells over a dark noisy background. Deterministic per seed.
LabeledDataset gen_synthetic(std::size_t num_classes, std::size_t per_class,
                             std::size_t image_size, std::uint64_t seed,
                             std::size_t channels = 3);

/// Cell indices (row-major on the 4×4 layout) owned by each synthetic class.
std::vector<std::array<std::size_t, 4>> synthetic_class_cells(std::size_t num_classes);

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

/// Seeded partition into train/val/test by fractions summing to 1. Sizes are
/// floor(f·N) for train and val, the remainder for test; each split keeps the
/// input's relative order.
DatasetSplits split(const LabeledDataset& dataset, std::array<double, 3> fractions,
                    std::uint64_t seed);

/// Per-channel mean and standard deviation over a dataset.
Normalization compute_normalization(const LabeledDataset& dataset);

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  nlohmann::json source;
  std::size_t num_classes = 0;
  Shape image_shape;
  Normalization normalization;
  std::optional<std::uint64_t> generation_seed;
  struct SplitEntry {
    std::string name;
    std::size_t size = 0;
    std::map<std::string, std::string> files;     // role -> file name
    std::map<std::string, std::string> checksums;  // role -> sha256
  };
  std::vector<SplitEntry> splits;
  std::size_t total_size() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Writes each split as IDX files (float32 images, labels, int32 ids) plus a
/// manifest.json carrying checksums and normalization constants.
DatasetManifest write_dataset(const std::filesystem::path& dir,
                              const std::vector<const LabeledDataset*>& splits,
                              const nlohmann::json& source,
                              const Normalization& normalization,
                              std::optional<std::uint64_t> generation_seed = std::nullopt);

struct StoredDataset {
  DatasetManifest manifest;
  std::map<std::string, LabeledDataset> splits;

  const LabeledDataset& at(const std::string& name) const;
};

/// Loads a directory written by write_dataset, verifying every checksum.
StoredDataset read_dataset(const std::filesystem::path& dir);

/// Serializes images as big-endian float32 IDX (0x00000D04, N×C×H×W).
void write_idx_images(const std::filesystem::path& path, std::span<const Image> images,
                      const Shape& image_shape);
/// Unsigned-byte IDX labels (0x00000801); int32 (0x00000C01) when ≥ 256 classes.
void write_idx_labels(const std::filesystem::path& path, std::span<const std::size_t> labels,
                      std::size_t num_classes);
/// Int32 IDX ids (0x00000C01).
void write_idx_ids(const std::filesystem::path& path, std::span<const std::uint64_t> ids);
std::vector<std::uint64_t> read_idx_ids(const std::filesystem::path& path);

}  // namespace patchguard

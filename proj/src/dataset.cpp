#include "patchguard/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "byte_io.hpp"
#include "patchguard/checksum.hpp"
#include "patchguard/errors.hpp"
#include "patchguard/rng.hpp"

namespace patchguard {

namespace fs = std::filesystem;
using detail::ByteReader;

namespace {

constexpr std::uint32_t kIdxUbyte3 = 0x00000803;
constexpr std::uint32_t kIdxUbyte4 = 0x00000804;
constexpr std::uint32_t kIdxFloat3 = 0x00000D03;
constexpr std::uint32_t kIdxFloat4 = 0x00000D04;
constexpr std::uint32_t kIdxUbyteLabels = 0x00000801;
constexpr std::uint32_t kIdxIntLabels = 0x00000C01;

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::string hex32(std::uint32_t v) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string s = "0x";
  for (int i = 7; i >= 0; --i) s.push_back(kHex[(v >> (4 * i)) & 0xF]);
  return s;
}

struct IdxImages {
  std::vector<Image> images;
};

IdxImages parse_idx_images(const fs::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  ByteReader in(bytes, path.string());
  const auto magic = in.be<std::uint32_t>();
  const bool is_float = magic == kIdxFloat3 || magic == kIdxFloat4;
  std::size_t dims = 0;
  if (magic == kIdxUbyte3 || magic == kIdxFloat3) {
    dims = 3;
  } else if (magic == kIdxUbyte4 || magic == kIdxFloat4) {
    dims = 4;
  } else {
    throw FormatError(path.string() + ": bad IDX image magic " + hex32(magic) +
                      " at byte offset 0");
  }
  std::vector<std::size_t> header;
  for (std::size_t d = 0; d < dims; ++d) header.push_back(in.be<std::uint32_t>());
  const std::size_t count = header[0];
  Shape shape = dims == 3 ? Shape{1, header[1], header[2]}
                          : Shape{header[1], header[2], header[3]};
  for (std::size_t d : shape) {
    if (d == 0) in.fail("zero image dimension in header");
  }
  const std::size_t per_image = shape_numel(shape);
  const std::size_t elem = is_float ? 4 : 1;
  IdxImages out;
  out.images.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    in.require(per_image * elem);
    std::vector<float> data(per_image);
    if (is_float) {
      for (auto& v : data) v = in.be_float();
    } else {
      const unsigned char* p = in.take(per_image);
      for (std::size_t i = 0; i < per_image; ++i) data[i] = static_cast<float>(p[i]) / 255.0f;
    }
    out.images.emplace_back(shape, std::move(data));
  }
  if (in.remaining() != 0) {
    in.fail(std::to_string(in.remaining()) + " trailing bytes after " + std::to_string(count) +
            " images");
  }
  return out;
}

std::vector<std::size_t> parse_idx_labels(const fs::path& path,
                                          std::optional<std::size_t> num_classes) {
  const auto bytes = detail::read_file_bytes(path);
  ByteReader in(bytes, path.string());
  const auto magic = in.be<std::uint32_t>();
  if (magic != kIdxUbyteLabels && magic != kIdxIntLabels) {
    throw FormatError(path.string() + ": bad IDX label magic " + hex32(magic) +
                      " at byte offset 0");
  }
  const std::size_t count = in.be<std::uint32_t>();
  std::vector<std::size_t> labels(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t at = in.offset();
    const std::size_t label = magic == kIdxUbyteLabels
                                  ? in.be<std::uint8_t>()
                                  : static_cast<std::size_t>(in.be<std::uint32_t>());
    if (num_classes && label >= *num_classes) {
      throw FormatError(path.string() + ": label " + std::to_string(label) + " outside [0, " +
                        std::to_string(*num_classes) + ") at byte offset " + std::to_string(at));
    }
    labels[n] = label;
  }
  if (in.remaining() != 0) {
    in.fail(std::to_string(in.remaining()) + " trailing bytes after " + std::to_string(count) +
            " labels");
  }
  return labels;
}

std::size_t infer_classes(const std::vector<std::size_t>& labels) {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// LabeledDataset

Shape LabeledDataset::image_shape() const {
  return images.empty() ? Shape{} : images.front().shape();
}

void LabeledDataset::validate() const {
  if (labels.size() != images.size() || ids.size() != images.size()) {
    throw InputError("dataset '" + split + "': " + std::to_string(images.size()) + " images, " +
                     std::to_string(labels.size()) + " labels, " + std::to_string(ids.size()) +
                     " ids");
  }
  const Shape shape = image_shape();
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape) {
      throw InputError("dataset '" + split + "': image " + std::to_string(i) + " has shape " +
                       shape_string(images[i].shape()) + ", expected " + shape_string(shape));
    }
    if (labels[i] >= num_classes) {
      throw InputError("dataset '" + split + "': label " + std::to_string(labels[i]) +
                       " of sample " + std::to_string(i) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    if (!seen.insert(ids[i]).second) {
      throw InputError("dataset '" + split + "': duplicate id " + std::to_string(ids[i]));
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.split = split;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  out.ids.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) {
      throw InputError("subset index " + std::to_string(i) + " outside dataset of size " +
                       std::to_string(size()));
    }
    out.images.push_back(images[i]);
    out.labels.push_back(labels[i]);
    out.ids.push_back(ids[i]);
  }
  return out;
}

std::string LabeledDataset::checksum() const {
  Sha256 d;
  const std::uint64_t header[2] = {size(), num_classes};
  d.update(header, sizeof(header));
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t dim : images[i].shape()) {
      const std::uint64_t v = dim;
      d.update(&v, sizeof(v));
    }
    d.update(images[i].raw(), images[i].size() * sizeof(float));
    const std::uint64_t meta[2] = {labels[i], ids[i]};
    d.update(meta, sizeof(meta));
  }
  return d.hex();
}

// ---------------------------------------------------------------------------
// Loaders

LabeledDataset load_idx(const fs::path& images_path, const fs::path& labels_path,
                        std::optional<std::size_t> num_classes) {
  auto parsed = parse_idx_images(images_path);
  auto labels = parse_idx_labels(labels_path, num_classes);
  if (parsed.images.size() != labels.size()) {
    throw FormatError("IDX count mismatch: " + images_path.string() + " declares " +
                      std::to_string(parsed.images.size()) + " images at byte offset 4, " +
                      labels_path.string() + " declares " + std::to_string(labels.size()) +
                      " labels at byte offset 4");
  }
  LabeledDataset out;
  out.num_classes = num_classes.value_or(infer_classes(labels));
  out.images = std::move(parsed.images);
  out.labels = std::move(labels);
  out.ids.resize(out.images.size());
  std::iota(out.ids.begin(), out.ids.end(), std::uint64_t{0});
  return out;
}

LabeledDataset load_cifar_binary(std::span<const fs::path> paths) {
  LabeledDataset out;
  out.num_classes = 10;
  const Shape shape{3, kCifarSide, kCifarSide};
  for (const auto& path : paths) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.empty()) {
      spdlog::warn("cifar: {} is empty", path.string());
      continue;
    }
    if (bytes.size() % kCifarRecord != 0) {
      const std::size_t whole = bytes.size() / kCifarRecord;
      throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of " + std::to_string(kCifarRecord) +
                        "; partial record at byte offset " + std::to_string(whole * kCifarRecord));
    }
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
      const std::size_t label = bytes[off];
      if (label >= out.num_classes) {
        throw FormatError(path.string() + ": label " + std::to_string(label) +
                          " outside [0, 10) at byte offset " + std::to_string(off));
      }
      std::vector<float> data(kCifarRecord - 1);
      for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<float>(bytes[off + 1 + i]) / 255.0f;
      }
      out.ids.push_back(out.images.size());
      out.images.emplace_back(shape, std::move(data));
      out.labels.push_back(label);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic renderings

namespace {

constexpr std::size_t kCellsPerSide = 4;
constexpr std::size_t kCells = kCellsPerSide * kCellsPerSide;
constexpr std::uint64_t kCellCodeSeed = 0x5ce11c0de;

enum class Glyph { square, disk, plus, diamond };

bool glyph_covers(Glyph g, double dy, double dx, double r) {
  switch (g) {
    case Glyph::square:
      return std::abs(dy) <= r && std::abs(dx) <= r;
    case Glyph::disk:
      return dy * dy + dx * dx <= r * r;
    case Glyph::plus: {
      const double arm = 0.4 * r;
      return (std::abs(dy) <= r && std::abs(dx) <= arm) ||
             (std::abs(dx) <= r && std::abs(dy) <= arm);
    }
    case Glyph::diamond:
      return std::abs(dy) + std::abs(dx) <= r;
  }
  return false;
}

}  // namespace

std::vector<std::array<std::size_t, 4>> synthetic_class_cells(std::size_t num_classes) {
  std::vector<std::array<std::size_t, 4>> all;
  for (std::size_t a = 0; a < kCells; ++a)
    for (std::size_t b = a + 1; b < kCells; ++b)
      for (std::size_t c = b + 1; c < kCells; ++c)
        for (std::size_t d = c + 1; d < kCells; ++d) all.push_back({a, b, c, d});

  Rng gen(kCellCodeSeed);
  const auto order = random_permutation(all.size(), gen);
  std::vector<std::array<std::size_t, 4>> chosen;
  for (std::size_t idx : order) {
    if (chosen.size() == num_classes) break;
    const auto& cand = all[idx];
    const bool compatible = std::all_of(chosen.begin(), chosen.end(), [&](const auto& other) {
      std::size_t shared = 0;
      for (std::size_t x : cand) shared += std::count(other.begin(), other.end(), x);
      return shared <= 1;
    });
    if (compatible) chosen.push_back(cand);
  }
  if (chosen.size() < num_classes) {
    throw ConfigError("synthetic: cannot build " + std::to_string(num_classes) +
                      " distinct cell codes (at most " + std::to_string(chosen.size()) + ")");
  }
  return chosen;
}

LabeledDataset gen_synthetic(std::size_t num_classes, std::size_t per_class,
                             std::size_t image_size, std::uint64_t seed, std::size_t channels) {
  if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (image_size < 8 || image_size % kCellsPerSide != 0) {
    throw ConfigError("synthetic: image_size must be a multiple of 4 and at least 8, got " +
                      std::to_string(image_size));
  }
  if (channels == 0) throw ConfigError("synthetic: channels must be positive");
  const auto codes = synthetic_class_cells(num_classes);
  const double cell = static_cast<double>(image_size) / kCellsPerSide;
  const Shape shape{channels, image_size, image_size};

  Rng gen(derive_seed(seed, "synthetic"));
  LabeledDataset out;
  out.num_classes = num_classes;
  out.images.reserve(num_classes * per_class);
  for (std::size_t n = 0; n < per_class; ++n) {
    for (std::size_t label = 0; label < num_classes; ++label) {
      Image img(shape);
      for (std::size_t c = 0; c < channels; ++c) {
        const double base = 0.06 * uniform01(gen);
        for (std::size_t i = 0; i < image_size * image_size; ++i) {
          img[c * image_size * image_size + i] =
              static_cast<float>(base + 0.02 * standard_normal(gen));
        }
      }
      for (std::size_t code_cell : codes[label]) {
        const auto glyph = static_cast<Glyph>(uniform_below(gen, 4));
        const double radius = (0.55 + 0.2 * uniform01(gen)) * cell / 2.0;
        std::vector<double> color(channels);
        for (auto& v : color) v = 0.6 + 0.4 * uniform01(gen);
        const double cy = (static_cast<double>(code_cell / kCellsPerSide) + 0.5) * cell;
        const double cx = (static_cast<double>(code_cell % kCellsPerSide) + 0.5) * cell;
        const auto y0 = static_cast<std::size_t>(cy - cell / 2);
        const auto x0 = static_cast<std::size_t>(cx - cell / 2);
        const auto side = static_cast<std::size_t>(cell);
        for (std::size_t y = y0; y < y0 + side; ++y) {
          for (std::size_t x = x0; x < x0 + side; ++x) {
            if (!glyph_covers(glyph, y + 0.5 - cy, x + 0.5 - cx, radius)) continue;
            for (std::size_t c = 0; c < channels; ++c) {
              img.at(c, y, x) = static_cast<float>(color[c] + 0.03 * standard_normal(gen));
            }
          }
        }
      }
      for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
      out.ids.push_back(out.images.size());
      out.images.push_back(std::move(img));
      out.labels.push_back(label);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits and normalization

DatasetSplits split(const LabeledDataset& dataset, std::array<double, 3> fractions,
                    std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split: fractions must be non-negative");
  }
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split: fractions sum to " + std::to_string(sum) + ", expected 1");
  }
  const std::size_t n = dataset.size();
  const auto take = [n](double f) {
    return std::min(n, static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)));
  };
  const std::size_t n_train = take(fractions[0]);
  const std::size_t n_val = std::min(n - n_train, take(fractions[1]));

  Rng gen(derive_seed(seed, "split"));
  const auto perm = random_permutation(n, gen);
  auto part = [&](std::size_t begin, std::size_t end, const char* tag) {
    std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                 perm.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(idx.begin(), idx.end());
    LabeledDataset out = dataset.subset(idx);
    out.split = tag;
    return out;
  };
  return DatasetSplits{part(0, n_train, "train"), part(n_train, n_train + n_val, "val"),
                       part(n_train + n_val, n, "test")};
}

Normalization compute_normalization(const LabeledDataset& dataset) {
  if (dataset.empty()) throw InputError("normalization: empty dataset");
  const std::size_t channels = dataset.image_shape()[0];
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t plane = 0;
  for (const auto& img : dataset.images) {
    plane = img.size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
      const float* p = img.raw() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum[c] += p[i];
        sq[c] += static_cast<double>(p[i]) * p[i];
      }
    }
  }
  const double count = static_cast<double>(plane * dataset.size());
  Normalization norm;
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mean * mean);
    norm.mean.push_back(static_cast<float>(mean));
    norm.stddev.push_back(static_cast<float>(std::max(std::sqrt(var), 1e-6)));
  }
  return norm;
}

// ---------------------------------------------------------------------------
// IDX writers

void write_idx_images(const fs::path& path, std::span<const Image> images,
                      const Shape& image_shape) {
  if (image_shape.size() != 3) {
    throw DimensionError("write_idx_images: expected C×H×W shape, got " +
                         shape_string(image_shape));
  }
  std::vector<unsigned char> out;
  out.reserve(20 + images.size() * shape_numel(image_shape) * 4);
  detail::put_be(out, kIdxFloat4);
  detail::put_be(out, static_cast<std::uint32_t>(images.size()));
  for (std::size_t d : image_shape) detail::put_be(out, static_cast<std::uint32_t>(d));
  for (const auto& img : images) {
    if (img.shape() != image_shape) {
      throw DimensionError("write_idx_images: image shape " + shape_string(img.shape()) +
                           " differs from " + shape_string(image_shape));
    }
    for (float v : img.data()) detail::put_be_float(out, v);
  }
  detail::write_file_bytes(path, out);
}

void write_idx_labels(const fs::path& path, std::span<const std::size_t> labels,
                      std::size_t num_classes) {
  const bool wide = num_classes > 256;
  std::vector<unsigned char> out;
  detail::put_be(out, wide ? kIdxIntLabels : kIdxUbyteLabels);
  detail::put_be(out, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t l : labels) {
    if (wide) {
      detail::put_be(out, static_cast<std::uint32_t>(l));
    } else {
      out.push_back(static_cast<unsigned char>(l));
    }
  }
  detail::write_file_bytes(path, out);
}

void write_idx_ids(const fs::path& path, std::span<const std::uint64_t> ids) {
  std::vector<unsigned char> out;
  detail::put_be(out, kIdxIntLabels);
  detail::put_be(out, static_cast<std::uint32_t>(ids.size()));
  for (auto id : ids) {
    if (id > 0xFFFFFFFFu) throw FormatError("write_idx_ids: id " + std::to_string(id) + " exceeds 32 bits");
    detail::put_be(out, static_cast<std::uint32_t>(id));
  }
  detail::write_file_bytes(path, out);
}

std::vector<std::uint64_t> read_idx_ids(const fs::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  ByteReader in(bytes, path.string());
  const auto magic = in.be<std::uint32_t>();
  if (magic != kIdxIntLabels) {
    throw FormatError(path.string() + ": bad IDX id magic " + hex32(magic) + " at byte offset 0");
  }
  const std::size_t count = in.be<std::uint32_t>();
  std::vector<std::uint64_t> ids(count);
  for (auto& id : ids) id = in.be<std::uint32_t>();
  if (in.remaining() != 0) in.fail("trailing bytes after ids");
  return ids;
}

// ---------------------------------------------------------------------------
// Manifest

std::size_t DatasetManifest::total_size() const {
  std::size_t n = 0;
  for (const auto& s : splits) n += s.size;
  return n;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"format_version", m.format_version},
                     {"source", m.source},
                     {"num_classes", m.num_classes},
                     {"image_shape", m.image_shape},
                     {"normalization", m.normalization},
                     {"total_size", m.total_size()}};
  if (m.generation_seed) j["generation_seed"] = *m.generation_seed;
  auto splits = nlohmann::json::array();
  for (const auto& s : m.splits) {
    splits.push_back({{"name", s.name}, {"size", s.size}, {"files", s.files},
                      {"checksums", s.checksums}});
  }
  j["splits"] = std::move(splits);
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != DatasetManifest::kFormatVersion) {
      throw FormatError("dataset manifest: unsupported format_version " +
                        std::to_string(m.format_version) + " (expected " +
                        std::to_string(DatasetManifest::kFormatVersion) + ")");
    }
    m.source = j.value("source", nlohmann::json::object());
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.image_shape = j.at("image_shape").get<Shape>();
    m.normalization = j.value("normalization", Normalization{});
    m.generation_seed.reset();
    if (j.contains("generation_seed")) m.generation_seed = j["generation_seed"].get<std::uint64_t>();
    m.splits.clear();
    for (const auto& s : j.at("splits")) {
      DatasetManifest::SplitEntry e;
      e.name = s.at("name").get<std::string>();
      e.size = s.at("size").get<std::size_t>();
      e.files = s.at("files").get<std::map<std::string, std::string>>();
      e.checksums = s.at("checksums").get<std::map<std::string, std::string>>();
      m.splits.push_back(std::move(e));
    }
    if (j.contains("total_size") && j["total_size"].get<std::size_t>() != m.total_size()) {
      throw FormatError("dataset manifest: split sizes do not sum to total_size");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
}

DatasetManifest write_dataset(const fs::path& dir, const std::vector<const LabeledDataset*>& splits,
                              const nlohmann::json& source, const Normalization& normalization,
                              std::optional<std::uint64_t> generation_seed) {
  if (splits.empty()) throw InputError("write_dataset: no splits given");
  fs::create_directories(dir);
  DatasetManifest m;
  m.source = source;
  m.normalization = normalization;
  m.generation_seed = generation_seed;
  m.num_classes = splits.front()->num_classes;
  for (const auto* ds : splits) {
    if (!ds->empty()) {
      m.image_shape = ds->image_shape();
      break;
    }
  }
  std::set<std::string> names;
  for (const auto* ds : splits) {
    ds->validate();
    if (!names.insert(ds->split).second) {
      throw InputError("write_dataset: duplicate split name '" + ds->split + "'");
    }
    if (ds->num_classes != m.num_classes || (!ds->empty() && ds->image_shape() != m.image_shape)) {
      throw InputError("write_dataset: split '" + ds->split + "' disagrees on classes or shape");
    }
    DatasetManifest::SplitEntry e;
    e.name = ds->split;
    e.size = ds->size();
    e.files = {{"images", ds->split + "-images.idx"},
               {"labels", ds->split + "-labels.idx"},
               {"ids", ds->split + "-ids.idx"}};
    write_idx_images(dir / e.files["images"], ds->images, m.image_shape);
    write_idx_labels(dir / e.files["labels"], ds->labels, m.num_classes);
    write_idx_ids(dir / e.files["ids"], ds->ids);
    for (const auto& [role, file] : e.files) e.checksums[role] = sha256_file(dir / file);
    m.splits.push_back(std::move(e));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << nlohmann::json(m).dump(2) << '\n';
  return m;
}

const LabeledDataset& StoredDataset::at(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw InputError("dataset has no split named '" + name + "'");
  return it->second;
}

StoredDataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  StoredDataset out;
  out.manifest = j.get<DatasetManifest>();
  for (const auto& s : out.manifest.splits) {
    for (const auto& role : {"images", "labels", "ids"}) {
      if (!s.files.contains(role) || !s.checksums.contains(role)) {
        throw FormatError(manifest_path.string() + ": split '" + s.name + "' lacks " + role);
      }
      const fs::path file = dir / s.files.at(role);
      const auto actual = sha256_file(file);
      if (actual != s.checksums.at(role)) {
        throw FormatError(file.string() + ": checksum mismatch (manifest " +
                          s.checksums.at(role) + ", file " + actual + ")");
      }
    }
    LabeledDataset ds = load_idx(dir / s.files.at("images"), dir / s.files.at("labels"),
                                 out.manifest.num_classes);
    ds.ids = read_idx_ids(dir / s.files.at("ids"));
    ds.split = s.name;
    if (ds.size() != s.size) {
      throw FormatError(manifest_path.string() + ": split '" + s.name + "' declares " +
                        std::to_string(s.size) + " samples, files hold " +
                        std::to_string(ds.size()));
    }
    ds.validate();
    out.splits.emplace(s.name, std::move(ds));
  }
  return out;
}

}  // namespace patchguard

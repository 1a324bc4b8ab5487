#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "patchguard/dataset.hpp"
#include "patchguard/model.hpp"
#include "patchguard/rng.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "pg-";
    if (info) name += std::string(info->test_suite_name()) + "-" + info->name();
    std::random_device rd;
    name += "-" + std::to_string(rd());
    path_ = fs::temp_directory_path() / name;
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  fs::path path_;
};

inline void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void push_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

inline patchguard::Image random_image(const patchguard::Shape& shape, std::uint64_t seed) {
  patchguard::Rng gen(seed);
  patchguard::Image img(shape);
  for (auto& v : img.data()) v = static_cast<float>(patchguard::uniform01(gen));
  return img;
}

/// Small labeled set of random images with ids 0..n-1 and labels i % classes.
inline patchguard::LabeledDataset random_dataset(std::size_t n, std::size_t classes,
                                                 const patchguard::Shape& shape,
                                                 std::uint64_t seed) {
  patchguard::LabeledDataset d;
  d.num_classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    d.images.push_back(random_image(shape, patchguard::derive_seed(seed, i)));
    d.labels.push_back(i % classes);
    d.ids.push_back(i);
  }
  return d;
}

/// Classifier driven by a function of the image; for defense and metric tests.
class FnClassifier : public patchguard::Classifier {
 public:
  using Fn = std::function<std::size_t(const patchguard::Image&)>;
  FnClassifier(std::size_t classes, patchguard::Shape shape, Fn fn)
      : classes_(classes), shape_(std::move(shape)), fn_(std::move(fn)) {}

  std::size_t num_classes() const override { return classes_; }
  patchguard::Shape input_shape() const override { return shape_; }
  std::vector<float> logits(const patchguard::Image& x) const override {
    std::vector<float> out(classes_, 0.0f);
    out.at(fn_(x)) = 1.0f;
    return out;
  }

 private:
  std::size_t classes_;
  patchguard::Shape shape_;
  Fn fn_;
};

}  // namespace testing_support

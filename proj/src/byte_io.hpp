#pragma once

// Endian-explicit helpers shared by the IDX and checkpoint codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchguard/errors.hpp"

namespace patchguard::detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading " + path.string());
  }
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

template <typename U>
void put_be(std::vector<unsigned char>& out, U value) {
  for (int i = sizeof(U) - 1; i >= 0; --i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

inline void put_be_float(std::vector<unsigned char>& out, float v) {
  put_be(out, std::bit_cast<std::uint32_t>(v));
}

/// Bounds-checked cursor over a byte buffer; failures report the offset.
class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void require(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated at byte offset " + std::to_string(pos_) + " (needed " +
                        std::to_string(n) + " more bytes, " + std::to_string(remaining()) +
                        " available)");
    }
  }

  template <typename U>
  U be() {
    require(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v = static_cast<U>((v << 8) | bytes_[pos_ + i]);
    pos_ += sizeof(U);
    return v;
  }

  template <typename U>
  U le() {
    require(sizeof(U));
    U v = 0;
    for (std::size_t i = sizeof(U); i-- > 0;) v = static_cast<U>((v << 8) | bytes_[pos_ + i]);
    pos_ += sizeof(U);
    return v;
  }

  float be_float() { return std::bit_cast<float>(be<std::uint32_t>()); }

  const unsigned char* take(std::size_t n) {
    require(n);
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw FormatError(what_ + ": " + message + " at byte offset " + std::to_string(pos_));
  }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace patchguard::detail

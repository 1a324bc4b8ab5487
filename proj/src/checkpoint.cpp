#include "patchguard/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "byte_io.hpp"

namespace patchguard {

using detail::ByteReader;
using detail::put_le;

void to_json(nlohmann::json& j, const TrainingMetadata& m) {
  j = nlohmann::json{{"epochs", m.epochs},
                     {"seed", m.seed},
                     {"dataset_checksum", m.dataset_checksum},
                     {"extra", m.extra}};
}

void from_json(const nlohmann::json& j, TrainingMetadata& m) {
  m.epochs = j.value("epochs", std::size_t{0});
  m.seed = j.value("seed", std::uint64_t{0});
  m.dataset_checksum = j.value("dataset_checksum", std::string{});
  m.extra = j.value("extra", nlohmann::json::object());
}

namespace {

constexpr std::uint8_t kDtypeFloat32 = 0;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& model,
                     const TrainingMetadata& metadata) {
  std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le(out, kCheckpointVersion);
  const std::string blob =
      nlohmann::json{{"model", model.config_json()}, {"metadata", metadata}}.dump();
  put_le(out, static_cast<std::uint64_t>(blob.size()));
  out.insert(out.end(), blob.begin(), blob.end());

  const auto& params = model.parameters();
  put_le(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_le(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    out.push_back(kDtypeFloat32);
    put_le(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put_le(out, static_cast<std::uint64_t>(d));
    for (float v : p.value.data()) put_le(out, std::bit_cast<std::uint32_t>(v));
  }
  detail::write_file_bytes(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  ByteReader in(bytes, "checkpoint " + path.string());

  const unsigned char* magic = in.take(sizeof kCheckpointMagic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FormatError("checkpoint " + path.string() + ": bad magic (not a checkpoint file)");
  }
  const auto version = in.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + ": version " + std::to_string(version) +
                      " is incompatible with this build (expects " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto blob_size = in.le<std::uint64_t>();
  const unsigned char* blob = in.take(static_cast<std::size_t>(blob_size));

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob, blob + blob_size);
    ck.model_config = header.at("model");
    ck.metadata = header.value("metadata", nlohmann::json::object()).get<TrainingMetadata>();
  } catch (const nlohmann::json::exception& e) {
    in.fail(std::string("unreadable config blob (") + e.what() + ")");
  }
  ck.model = make_network<float>(ck.model_config);

  auto& params = ck.model->parameters();
  const auto count = in.le<std::uint32_t>();
  if (count != params.size()) {
    in.fail("holds " + std::to_string(count) + " tensors but the architecture has " +
            std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto name_len = in.le<std::uint32_t>();
    const unsigned char* name_bytes = in.take(name_len);
    const std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    if (name != p.name) in.fail("expected tensor " + p.name + ", found " + name);
    if (in.le<std::uint8_t>() != kDtypeFloat32) in.fail("tensor " + name + " has unknown dtype");
    const auto rank = in.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.le<std::uint64_t>());
    if (shape != p.value.shape()) {
      in.fail("tensor " + name + " has shape " + shape_string(shape) + ", expected " +
              shape_string(p.value.shape()));
    }
    for (float& v : p.value.data()) v = std::bit_cast<float>(in.le<std::uint32_t>());
  }
  if (in.remaining() != 0) in.fail(std::to_string(in.remaining()) + " trailing bytes");
  return ck;
}

}  // namespace patchguard

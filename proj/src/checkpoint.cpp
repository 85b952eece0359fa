#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "adamix/segmodel.hpp"

namespace adamix {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'M', 'X', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(const unsigned char* bytes) {
  unsigned char tmp[sizeof(U)];
  std::memcpy(tmp, bytes, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(tmp), std::end(tmp));
  U value;
  std::memcpy(&value, tmp, sizeof(U));
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams<float>& params, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["architecture"] = std::string(kArchitectureId);
  header["in_channels"] = params.arch().in_channels;
  header["classes"] = params.arch().classes;
  header["base_width"] = params.arch().base_width;
  header["step"] = meta.step;
  header["seed"] = meta.seed;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const ParamInfo& info : params.layout()) {
    tensors.push_back({{"name", info.name}, {"shape", info.shape}, {"offset", info.offset}, {"count", info.count}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float v : params.values()) put_le<float>(out, v);
  if (!out) throw FormatError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file: " + path);
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  }

  LoadedCheckpoint result;
  try {
    if (header.at("architecture").get<std::string>() != kArchitectureId) {
      throw FormatError("checkpoint architecture mismatch: " + header.at("architecture").get<std::string>());
    }
    ArchitectureConfig arch;
    arch.in_channels = header.at("in_channels").get<int>();
    arch.classes = header.at("classes").get<int>();
    arch.base_width = header.at("base_width").get<int>();
    result.meta.step = header.at("step").get<std::int64_t>();
    result.meta.seed = header.at("seed").get<std::uint64_t>();
    result.params = ModelParams<float>(arch);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != result.params.layout().size()) throw FormatError("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const ParamInfo& info = result.params.layout()[i];
      if (tensors[i].at("name").get<std::string>() != info.name ||
          tensors[i].at("count").get<std::size_t>() != info.count) {
        throw FormatError("checkpoint tensor mismatch at " + info.name);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }

  const std::size_t payload = 16 + header_len;
  if (bytes.size() != payload + result.params.size() * sizeof(float)) {
    throw FormatError("checkpoint payload size mismatch: " + path);
  }
  auto values = result.params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = get_le<float>(bytes.data() + payload + i * sizeof(float));
  }
  return result;
}

}  // namespace adamix

#include "ptee/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "ptee/errors.hpp"

namespace ptee {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'E', 'E'};
constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::vector<unsigned char>& b, std::size_t off) {
  return std::uint32_t{b[off]} | (std::uint32_t{b[off + 1]} << 8) |
         (std::uint32_t{b[off + 2]} << 16) | (std::uint32_t{b[off + 3]} << 24);
}

void pad_to_alignment(std::vector<unsigned char>& out) {
  while (out.size() % 8 != 0) out.push_back(0);
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::ordered_json& model,
                     const ParameterStore& params) {
  nlohmann::ordered_json manifest;
  manifest["model"] = model;
  auto& tensors = manifest["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, entry] : params.entries()) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = entry.tensor.shape();
    t["dtype"] = "f32";
    t["frozen"] = entry.frozen;
    t["buffer"] = entry.buffer;
    tensors.push_back(std::move(t));
  }
  const std::string manifest_text = manifest.dump();

  std::vector<unsigned char> bytes;
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u32(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<std::uint32_t>(manifest_text.size()));
  bytes.insert(bytes.end(), manifest_text.begin(), manifest_text.end());
  for (const auto& [name, entry] : params.entries()) {
    pad_to_alignment(bytes);
    const auto& values = entry.tensor.values();
    const std::size_t start = bytes.size();
    bytes.resize(start + values.size() * sizeof(float));
    std::memcpy(bytes.data() + start, values.data(), values.size() * sizeof(float));
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint", "cannot create '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw Error("checkpoint", "failed writing '" + tmp + "'");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw Error("checkpoint", "failed renaming '" + tmp + "' to '" + path + "'");
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint", "cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(file_size);
  if (file_size > 0) {
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(file_size));
  }
  if (!in) throw Error("checkpoint", "failed reading '" + path + "'");

  if (file_size < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error("checkpoint", "'" + path + "' is not a checkpoint: bad magic");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint", "'" + path + "' has unsupported checkpoint version " +
                                  std::to_string(version));
  }
  const std::uint32_t manifest_len = get_u32(bytes, 8);
  if (kHeaderBytes + manifest_len > file_size) {
    throw Error("checkpoint", "'" + path + "' truncated: manifest needs " +
                                  std::to_string(kHeaderBytes + manifest_len) +
                                  " bytes, file has " + std::to_string(file_size));
  }

  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(bytes.begin() + kHeaderBytes,
                                             bytes.begin() + kHeaderBytes + manifest_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint", "'" + path + "' has a corrupt manifest: " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("model") || !manifest.contains("tensors") ||
      !manifest["tensors"].is_array()) {
    throw Error("checkpoint", "'" + path + "' has a corrupt manifest: missing model/tensors");
  }

  LoadedCheckpoint loaded;
  loaded.model = manifest["model"];

  std::size_t offset = kHeaderBytes + manifest_len;
  for (const auto& t : manifest["tensors"]) {
    if (!t.contains("name") || !t.contains("shape") || !t.contains("dtype")) {
      throw Error("checkpoint", "'" + path + "' has a corrupt manifest: incomplete tensor entry");
    }
    const auto name = t["name"].get<std::string>();
    if (t["dtype"].get<std::string>() != "f32") {
      throw Error("checkpoint", "'" + path + "' tensor '" + name + "' has unsupported dtype '" +
                                    t["dtype"].get<std::string>() + "'");
    }
    const auto shape = t["shape"].get<nn::Shape>();
    if (offset % 8 != 0) offset += 8 - offset % 8;
    const auto count = static_cast<std::size_t>(nn::shape_numel(shape));
    const std::size_t end = offset + count * sizeof(float);
    if (end > file_size) {
      throw Error("checkpoint", "'" + path + "' truncated: tensor '" + name + "' needs bytes up to " +
                                    std::to_string(end) + ", file has " + std::to_string(file_size));
    }
    auto& tensor = loaded.params.create(name, shape, t.value("buffer", false));
    std::memcpy(tensor.values_mut().data(), bytes.data() + offset, count * sizeof(float));
    if (t.value("frozen", false)) loaded.params.freeze_prefix(name);
    offset = end;
  }
  if (offset != file_size) {
    throw Error("checkpoint", "'" + path + "' payload does not match manifest: " +
                                  std::to_string(file_size - offset) + " unexpected trailing bytes");
  }
  return loaded;
}

}  // namespace ptee

#include "pairdiff/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace pairdiff::nd {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'T', 'W'};
constexpr uint32_t kVersion = 1;

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensors(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open for write: " + tmp);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
      put_u16(os, static_cast<uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      os.put(static_cast<char>(t.rank()));
      for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
      os.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!os) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("rename failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("checkpoint not found: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic in " + path);
  }
  const uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  const uint32_t count = get_u32(is);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const int rank = is.get();
    if (rank < 0 || rank > 8) throw FormatError("implausible tensor rank in " + path);
    std::vector<int> shape(static_cast<size_t>(rank));
    for (int d = 0; d < rank; ++d) shape[static_cast<size_t>(d)] = static_cast<int>(get_u32(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw FormatError("truncated checkpoint: " + path);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_params(const std::string& path, const ParamStore& store) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.reserve(store.values.size());
  for (size_t i = 0; i < store.values.size(); ++i) {
    tensors.emplace_back(store.names[i], store.values[i]);
  }
  save_tensors(path, tensors);
}

void load_params(const std::string& path, ParamStore& store) {
  auto tensors = load_tensors(path);
  std::vector<bool> filled(store.values.size(), false);
  for (auto& [name, t] : tensors) {
    int slot = store.find(name);
    if (slot < 0) continue;
    if (!t.same_shape(store.values[static_cast<size_t>(slot)])) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) +
                        ", model expects " + shape_str(store.values[static_cast<size_t>(slot)].shape));
    }
    store.values[static_cast<size_t>(slot)] = std::move(t);
    filled[static_cast<size_t>(slot)] = true;
  }
  for (size_t i = 0; i < filled.size(); ++i) {
    if (!filled[i]) throw FormatError("checkpoint " + path + " missing parameter '" + store.names[i] + "'");
  }
}

}  // namespace pairdiff::nd

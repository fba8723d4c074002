#include "featlens/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace featlens {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need byte swaps");

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& context) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(bool(in), "checkpoint: truncated file while reading " + context);
  return v;
}

}  // namespace

void save_checkpoint(const std::map<std::string, Tensor>& tensors, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  check(bool(f), "checkpoint: cannot write " + path);
  f.write("FLNS", 4);
  write_raw<uint32_t>(f, kCheckpointVersion);
  write_raw<uint32_t>(f, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    check(name.size() <= 0xffff, "checkpoint: tensor name too long: " + name);
    write_raw<uint16_t>(f, uint16_t(name.size()));
    f.write(name.data(), std::streamsize(name.size()));
    check(t.rank() <= 0xff, "checkpoint: tensor rank too large for '" + name + "'");
    write_raw<uint8_t>(f, uint8_t(t.rank()));
    for (int d : t.shape()) write_raw<uint32_t>(f, uint32_t(d));
    auto data = t.data();
    f.write(reinterpret_cast<const char*>(data.data()),
            std::streamsize(data.size() * sizeof(float)));
  }
  check(bool(f), "checkpoint: short write to " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(bool(f), "checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  check(bool(f) && std::memcmp(magic, "FLNS", 4) == 0,
        "checkpoint: bad magic in " + path + " (not an FLNS file)");
  const uint32_t version = read_raw<uint32_t>(f, "version");
  check(version == kCheckpointVersion, "checkpoint: unknown format version " +
                                           std::to_string(version) + " in " + path);
  const uint32_t count = read_raw<uint32_t>(f, "entry count");
  std::map<std::string, Tensor> out;
  for (uint32_t e = 0; e < count; ++e) {
    const uint16_t name_len = read_raw<uint16_t>(f, "entry name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    check(bool(f), "checkpoint: truncated reading name of entry " + std::to_string(e));
    const uint8_t rank = read_raw<uint8_t>(f, "rank of '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      d = int(read_raw<uint32_t>(f, "dims of '" + name + "'"));
      check(d >= 0, "checkpoint: negative extent in '" + name + "'");
    }
    std::vector<float> data(size_t(numel(shape)));
    f.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * sizeof(float)));
    check(size_t(f.gcount()) == data.size() * sizeof(float),
          "checkpoint: truncated payload for entry '" + name + "' in " + path);
    check(!out.count(name), "checkpoint: duplicate tensor name '" + name + "' in " + path);
    out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace featlens

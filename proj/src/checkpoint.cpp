#include "massdist/checkpoint.hpp"

#include "massdist/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace massdist::nn {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'C', 'K'};

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto len = get_le<std::uint32_t>(is);
  if (len > (1u << 20)) throw std::runtime_error("checkpoint string too long");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

Checkpoint Checkpoint::from_params(const NetworkParams& p, std::map<std::string, std::string> metadata) {
  Checkpoint c;
  c.metadata = std::move(metadata);
  for (const auto& b : p.blocks()) c.blocks.emplace_back(b.name, b.value);
  return c;
}

void Checkpoint::restore(NetworkParams& p) const {
  if (blocks.size() != p.size()) throw ShapeMismatch("checkpoint block count differs from network");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& dst = p[static_cast<int>(i)];
    const auto& [name, value] = blocks[i];
    if (name != dst.name || value.rows() != dst.value.rows() || value.cols() != dst.value.cols()) {
      throw ShapeMismatch("checkpoint block " + name + " does not match " + dst.name);
    }
    dst.value = value;
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    os.write(kMagic, 4);
    put_le<std::uint32_t>(os, ckpt.schema_version);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
      put_string(os, k);
      put_string(os, v);
    }
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.blocks.size()));
    for (const auto& [name, value] : ckpt.blocks) {
      put_string(os, name);
      put_le<std::uint64_t>(os, static_cast<std::uint64_t>(value.rows()));
      put_le<std::uint64_t>(os, static_cast<std::uint64_t>(value.cols()));
      for (Eigen::Index i = 0; i < value.size(); ++i) put_le<double>(os, value.data()[i]);
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
  Checkpoint c;
  c.schema_version = get_le<std::uint32_t>(is);
  if (c.schema_version != kCheckpointSchema) {
    throw std::runtime_error("unsupported checkpoint schema " + std::to_string(c.schema_version));
  }
  const auto n_meta = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_string(is);
    c.metadata[k] = get_string(is);
  }
  const auto n_blocks = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    std::string name = get_string(is);
    const auto rows = get_le<std::uint64_t>(is);
    const auto cols = get_le<std::uint64_t>(is);
    if (rows * cols > (1ull << 28)) throw std::runtime_error("checkpoint block too large");
    Mat value(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = get_le<double>(is);
    c.blocks.emplace_back(std::move(name), std::move(value));
  }
  return c;
}

}  // namespace massdist::nn

// SPDX-License-Identifier: Apache-2.0
#include "tspt/numcore/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "tspt/error.hpp"

namespace tspt {

namespace {

template <class U>
void put(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get(std::istream& is, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw DataError("truncated checkpoint: " + path.string());
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return value;
}

std::string get_string(std::istream& is, std::uint64_t n,
                       const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError("truncated checkpoint: " + path.string());
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint: " + path.string());
  os.write("TSPT", 4);
  put<std::uint32_t>(os, Checkpoint::kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    for (double v : t.data()) put<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  put<std::uint64_t>(os, ckpt.trailer.size());
  os.write(ckpt.trailer.data(), static_cast<std::streamsize>(ckpt.trailer.size()));
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TSPT", 4) != 0) {
    throw DataError("not a checkpoint (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != Checkpoint::kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = get<std::uint32_t>(is, path);
    std::string name = get_string(is, name_len, path);
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw DataError("implausible tensor rank in " + path.string());
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(get<std::uint64_t>(is, path));
    if (!ckpt.tensors.emplace(name, Tensor::from(shape, std::move(values))).second) {
      throw DataError("duplicate checkpoint entry: " + name);
    }
  }
  const auto trailer_len = get<std::uint64_t>(is, path);
  ckpt.trailer = get_string(is, trailer_len, path);
  return ckpt;
}

}  // namespace tspt

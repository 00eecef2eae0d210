#include "rsdh/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rsdh {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'D', 'H'};

template <typename U>
void put(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw ArchiveError(std::string("archive truncated reading ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace

void TensorArchive::add(std::string name, Tensor<float> value) {
  if (contains(name)) throw std::invalid_argument("TensorArchive: duplicate entry '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& [n, _] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor<float>& TensorArchive::at(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ArchiveError("archive has no entry '" + name + "'");
}

void TensorArchive::write(std::ostream& out) const {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (float v : t.data()) put<float>(out, v);
  }
  if (!out) throw ArchiveError("failed writing archive");
}

TensorArchive TensorArchive::read(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ArchiveError("not an RSDH archive (bad magic)");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw ArchiveError("unsupported archive version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in, "tensor count");
  TensorArchive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "name length");
    if (len > (1u << 20)) throw ArchiveError("implausible name length " + std::to_string(len));
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ArchiveError("archive truncated reading name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 16) throw ArchiveError("implausible rank " + std::to_string(rank) + " for '" + name + "'");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      const auto v = get<std::uint64_t>(in, "dimension");
      if (v == 0 || v > (std::uint64_t{1} << 32)) throw ArchiveError("bad dimension in '" + name + "'");
      d = static_cast<std::size_t>(v);
      total *= v;
      if (total > (std::uint64_t{1} << 34)) throw ArchiveError("tensor '" + name + "' too large");
    }
    std::vector<float> data(static_cast<std::size_t>(total));
    for (auto& v : data) v = get<float>(in, "tensor data");
    archive.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot open '" + path.string() + "' for writing");
  write(out);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open '" + path.string() + "'");
  return read(in);
}

std::vector<char> TensorArchive::to_bytes() const {
  std::ostringstream out(std::ios::binary);
  write(out);
  const std::string s = out.str();
  return {s.begin(), s.end()};
}

}  // namespace rsdh

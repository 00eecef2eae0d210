#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rsdh/tensor.hpp"

namespace rsdh {

/// Named-tensor archive. Binary layout (all integers little-endian):
///   "RSDH"  u32 version  u32 count
///   per tensor: u32 name_len, name bytes (UTF-8), u32 rank, u64 dims[rank],
///               f32 data[prod(dims)]
/// Entry order is preserved, so load followed by save reproduces the bytes.
class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(std::string name, Tensor<float> value);
  bool contains(const std::string& name) const;
  const Tensor<float>& at(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor<float>>>& entries() const noexcept { return entries_; }

  void write(std::ostream& out) const;
  static TensorArchive read(std::istream& in);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

  std::vector<char> to_bytes() const;

 private:
  std::vector<std::pair<std::string, Tensor<float>>> entries_;
};

/// Malformed or unreadable archive.
class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rsdh

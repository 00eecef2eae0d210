#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "rsdh/data.hpp"

namespace rsdh {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB PNG -> [3,H,W] with values v/255.
Tensor<float> read_png(const std::filesystem::path& path);

/// [3,H,W] in [0,1] (values clamped) -> 8-bit RGB PNG, round(v*255).
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// Loads `<root>/input/*.png` paired with `<root>/gt/*.png` by filename,
/// sorted by name.
std::vector<ImagePair> load_dataset(const std::filesystem::path& root);

void write_dataset(const std::filesystem::path& root, const std::vector<ImagePair>& pairs);

}  // namespace rsdh

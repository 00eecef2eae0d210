#include "rsdh/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace rsdh {

namespace fs = std::filesystem;

Tensor<float> read_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw ImageIoError("cannot read PNG '" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageIoError("cannot decode PNG '" + path.string() + "': " + image.message);
  }
  const std::size_t H = image.height, W = image.width;
  Tensor<float> out({3, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) out[(c * H + y) * W + x] = static_cast<float>(buffer[(y * W + x) * 3 + c]) / 255.0f;
  return out;
}

void write_png(const fs::path& path, const Tensor<float>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("write_png", 0, "expected [3,H,W], got " + shape_to_string(img.shape()));
  const std::size_t H = img.dim(1), W = img.dim(2);
  std::vector<png_byte> buffer(H * W * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img[(c * H + y) * W + x], 0.0f, 1.0f);
        buffer[(y * W + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(W);
  image.height = static_cast<png_uint_32>(H);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw ImageIoError("cannot write PNG '" + path.string() + "': " + image.message);
  }
}

std::vector<ImagePair> load_dataset(const fs::path& root) {
  const fs::path input = root / "input", gt = root / "gt";
  if (!fs::is_directory(input)) throw ImageIoError("dataset '" + root.string() + "' has no input/ directory");
  if (!fs::is_directory(gt)) throw ImageIoError("dataset '" + root.string() + "' has no gt/ directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw ImageIoError("dataset '" + root.string() + "' has no PNG files in input/");
  std::vector<ImagePair> pairs;
  for (const auto& name : names) {
    if (!fs::exists(gt / name)) throw ImageIoError("dataset: '" + (gt / name).string() + "' is missing");
    ImagePair p{name, read_png(input / name), read_png(gt / name)};
    if (p.hazy.shape() != p.clear.shape()) throw ImageIoError("dataset: size mismatch between input and gt for '" + name + "'");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_dataset(const fs::path& root, const std::vector<ImagePair>& pairs) {
  fs::create_directories(root / "input");
  fs::create_directories(root / "gt");
  for (const auto& p : pairs) {
    write_png(root / "input" / p.name, p.hazy);
    write_png(root / "gt" / p.name, p.clear);
  }
}

}  // namespace rsdh

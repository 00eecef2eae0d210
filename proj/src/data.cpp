#include "rsdh/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

namespace rsdh {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

void check_image(const char* op, const Tensor<float>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError(op, 0, "expected [3,H,W], got " + shape_to_string(img.shape()));
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Bilinear upsampling of a g x g grid to H x W with corners aligned.
std::vector<double> upsample_grid(const std::vector<double>& grid, std::size_t g, std::size_t H, std::size_t W) {
  std::vector<double> out(H * W);
  auto coord = [g](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(g - 1) / static_cast<double>(n - 1);
  };
  for (std::size_t y = 0; y < H; ++y) {
    const double gy = coord(y, H);
    const std::size_t y0 = std::min(static_cast<std::size_t>(gy), g - 1), y1 = std::min(y0 + 1, g - 1);
    const double fy = gy - static_cast<double>(y0);
    for (std::size_t x = 0; x < W; ++x) {
      const double gx = coord(x, W);
      const std::size_t x0 = std::min(static_cast<std::size_t>(gx), g - 1), x1 = std::min(x0 + 1, g - 1);
      const double fx = gx - static_cast<double>(x0);
      const double top = grid[y0 * g + x0] * (1 - fx) + grid[y0 * g + x1] * fx;
      const double bot = grid[y1 * g + x0] * (1 - fx) + grid[y1 * g + x1] * fx;
      out[y * W + x] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

void checkerboard(Tensor<float>& img, std::mt19937_64& rng) {
  const std::size_t H = img.dim(1), W = img.dim(2);
  const std::size_t cell = std::uniform_int_distribution<std::size_t>(3, 12)(rng);
  double colors[2][3];
  for (auto& c : colors)
    for (double& v : c) v = uniform(rng, 0.0, 1.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t k = ((y / cell) + (x / cell)) % 2;
      for (std::size_t c = 0; c < 3; ++c) img[(c * H + y) * W + x] = static_cast<float>(colors[k][c]);
    }
}

void gradient_field(Tensor<float>& img, std::mt19937_64& rng) {
  const std::size_t H = img.dim(1), W = img.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double lo = uniform(rng, 0.0, 0.5), hi = uniform(rng, 0.5, 1.0);
    const double dx = std::cos(angle), dy = std::sin(angle);
    const double span = std::abs(dx) * static_cast<double>(W) + std::abs(dy) * static_cast<double>(H);
    const double x0 = dx < 0 ? static_cast<double>(W) : 0.0, y0 = dy < 0 ? static_cast<double>(H) : 0.0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double s = ((static_cast<double>(x) - x0) * dx + (static_cast<double>(y) - y0) * dy) / span;
        img[(c * H + y) * W + x] = static_cast<float>(lo + (hi - lo) * std::clamp(s, 0.0, 1.0));
      }
  }
}

// Sum of a few random plane waves per channel, rescaled to [0,1].
void band_limited_noise(Tensor<float>& img, std::mt19937_64& rng) {
  const std::size_t H = img.dim(1), W = img.dim(2);
  constexpr int kWaves = 6;
  for (std::size_t c = 0; c < 3; ++c) {
    double fx[kWaves], fy[kWaves], phase[kWaves];
    for (int k = 0; k < kWaves; ++k) {
      const double freq = uniform(rng, 0.02, 0.15), angle = uniform(rng, 0.0, std::numbers::pi);
      fx[k] = 2.0 * std::numbers::pi * freq * std::cos(angle);
      fy[k] = 2.0 * std::numbers::pi * freq * std::sin(angle);
      phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0.0;
        for (int k = 0; k < kWaves; ++k) s += std::sin(fx[k] * static_cast<double>(x) + fy[k] * static_cast<double>(y) + phase[k]);
        img[(c * H + y) * W + x] = static_cast<float>(0.5 + 0.5 * s / kWaves);
      }
  }
}

}  // namespace

HazeParams HazeParams::uniform(std::size_t height, std::size_t width, double t, double airlight) {
  if (!(t >= kMinTransmission && t <= 1.0)) throw std::invalid_argument("HazeParams: transmission outside [0.05, 1]");
  return HazeParams{airlight, Tensor<float>({height, width}, static_cast<float>(t))};
}

HazeParams make_haze_params(std::size_t height, std::size_t width, std::uint64_t seed, const HazeOptions& opts) {
  if (opts.grid < 2) throw std::invalid_argument("HazeOptions: grid must be at least 2");
  if (!(opts.strength >= 0.0 && opts.strength <= 1.0)) throw std::invalid_argument("HazeOptions: strength must be in [0,1]");
  if (!(opts.airlight_min <= opts.airlight_max)) throw std::invalid_argument("HazeOptions: airlight_min > airlight_max");
  std::mt19937_64 rng(seed);
  HazeParams p;
  p.airlight = opts.airlight_min == opts.airlight_max ? opts.airlight_min : uniform(rng, opts.airlight_min, opts.airlight_max);
  std::vector<double> grid(opts.grid * opts.grid);
  for (double& v : grid) v = uniform(rng, 1.0 - opts.strength, 1.0);
  const auto field = upsample_grid(grid, opts.grid, height, width);
  p.transmission = Tensor<float>({height, width});
  for (std::size_t i = 0; i < field.size(); ++i) p.transmission[i] = static_cast<float>(std::clamp(field[i], kMinTransmission, 1.0));
  return p;
}

Tensor<float> synthesize_haze(const Tensor<float>& clear, const HazeParams& p) {
  check_image("synthesize_haze", clear);
  const std::size_t H = clear.dim(1), W = clear.dim(2);
  require_shape("synthesize_haze", p.transmission.shape(), Shape{H, W});
  Tensor<float> out(clear.shape());
  const double A = p.airlight;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < H * W; ++i) {
      const double t = p.transmission[i];
      const double v = static_cast<double>(clear[c * H * W + i]) * t + A * (1.0 - t);
      out[c * H * W + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

Tensor<float> procedural_texture(std::size_t height, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> img({3, height, width});
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0: checkerboard(img, rng); break;
    case 1: gradient_field(img, rng); break;
    default: band_limited_noise(img, rng); break;
  }
  return img;
}

std::vector<ImagePair> make_synthetic_pairs(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed,
                                            const HazeOptions& opts) {
  std::vector<ImagePair> pairs(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Tensor<float> clear = procedural_texture(height, width, derive_seed(s, 0));
    Tensor<float> hazy = synthesize_haze(clear, make_haze_params(height, width, derive_seed(s, 1), opts));
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    pairs[i] = ImagePair{name, std::move(hazy), std::move(clear)};
  }
  return pairs;
}

Batch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t n, std::uint64_t seed) {
  if (pairs.empty()) throw std::invalid_argument("sample_patches: no image pairs");
  if (n == 0) throw std::invalid_argument("sample_patches: n must be positive");
  if (patch == 0 || patch % 4 != 0) throw std::invalid_argument("sample_patches: patch " + std::to_string(patch) + " must be a positive multiple of 4");
  for (const auto& p : pairs) {
    check_image("sample_patches", p.clear);
    if (p.hazy.shape() != p.clear.shape()) throw DimensionError("sample_patches", -1, "hazy/clear shapes differ for '" + p.name + "'");
    if (patch > std::min(p.clear.dim(1), p.clear.dim(2))) {
      throw std::invalid_argument("sample_patches: patch " + std::to_string(patch) + " exceeds image '" + p.name + "' (" +
                                  std::to_string(p.clear.dim(1)) + "x" + std::to_string(p.clear.dim(2)) + ")");
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order;
  Batch batch{Tensor<float>({n, 3, patch, patch}), Tensor<float>({n, 3, patch, patch})};
  const std::size_t plane = patch * patch;
  for (std::size_t k = 0; k < n; ++k) {
    if (order.empty()) {
      order.resize(pairs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
      std::shuffle(order.begin(), order.end(), rng);
    }
    const ImagePair& src = pairs[order.back()];
    order.pop_back();
    const std::size_t H = src.clear.dim(1), W = src.clear.dim(2);
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, H - patch)(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, W - patch)(rng);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x) {
          const std::size_t from = (c * H + y0 + y) * W + x0 + x, to = (k * 3 + c) * plane + y * patch + x;
          batch.hazy[to] = src.hazy[from];
          batch.clear[to] = src.clear[from];
        }
  }
  return batch;
}

Tensor<float> as_batch(const Tensor<float>& image) {
  check_image("as_batch", image);
  return image.reshaped({1, 3, image.dim(1), image.dim(2)});
}

Tensor<float> batch_item(const Tensor<float>& batch, std::size_t index) {
  if (batch.rank() != 4) throw DimensionError("batch_item", -1, "expected [B,C,H,W], got " + shape_to_string(batch.shape()));
  if (index >= batch.dim(0)) throw DimensionError("batch_item", 0, "index " + std::to_string(index) + " out of range");
  const std::size_t per = batch.numel() / batch.dim(0);
  std::vector<float> data(batch.data().begin() + static_cast<std::ptrdiff_t>(index * per),
                          batch.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * per));
  return Tensor<float>({batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(data));
}

}  // namespace rsdh

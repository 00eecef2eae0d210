#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsdh/tensor.hpp"

namespace rsdh {

/// splitmix64 mix of (seed, stream); used wherever a per-sample or per-step
/// generator is needed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct HazeOptions {
  double airlight_min = 0.7;
  double airlight_max = 1.0;
  /// Coarse grid values are drawn from [1 - strength, 1]; larger means thicker haze.
  double strength = 0.7;
  std::size_t grid = 4;
};

constexpr double kMinTransmission = 0.05;

struct HazeParams {
  double airlight = 1.0;
  Tensor<float> transmission;  // [H,W], within [kMinTransmission, 1]

  static HazeParams uniform(std::size_t height, std::size_t width, double t, double airlight);
};

/// Random smooth transmission field and airlight, deterministic in `seed`.
HazeParams make_haze_params(std::size_t height, std::size_t width, std::uint64_t seed, const HazeOptions& opts = {});

/// I = J*t + A*(1 - t), clamped to [0,1]. J is [3,H,W].
Tensor<float> synthesize_haze(const Tensor<float>& clear, const HazeParams& params);

/// Clear-scene stand-in in [0,1]: checkerboard, gradient field or
/// band-limited noise, picked by the seed. Shape [3,H,W].
Tensor<float> procedural_texture(std::size_t height, std::size_t width, std::uint64_t seed);

struct ImagePair {
  std::string name;
  Tensor<float> hazy;   // [3,H,W]
  Tensor<float> clear;  // [3,H,W]
};

std::vector<ImagePair> make_synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                            std::uint64_t seed, const HazeOptions& opts = {});

struct Batch {
  Tensor<float> hazy;   // [n,3,patch,patch]
  Tensor<float> clear;  // [n,3,patch,patch]
};

/// n aligned crops. Source images are drawn without replacement while
/// n <= pairs.size(), cycling through fresh shuffles otherwise.
Batch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t n, std::uint64_t seed);

/// [3,H,W] -> [1,3,H,W] and back.
Tensor<float> as_batch(const Tensor<float>& image);
Tensor<float> batch_item(const Tensor<float>& batch, std::size_t index);

}  // namespace rsdh

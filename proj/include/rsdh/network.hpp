#pragma once

#include <array>
#include <cstdint>

#include "rsdh/blocks.hpp"

namespace rsdh {

/// Architecture hyperparameters of the three-level residual U-Net.
struct ModelConfig {
  static constexpr std::size_t kInputChannels = 3;
  /// Base width chosen so the default model has ~1.80M parameters.
  static constexpr std::size_t kDefaultBaseChannels = 30;

  std::size_t base_channels = kDefaultBaseChannels;
  std::array<std::size_t, 3> block_counts{2, 3, 3};
  std::size_t state_dim = 16;
  int n_dirs = 4;
  bool use_dconv = true;
  bool use_silu = true;
  bool use_hadamard = true;
  bool use_ffn = true;
  double ffn_expand = 2.0;
  ScanAlgorithm scan = ScanAlgorithm::Sequential;

  void validate() const;
  VdbConfig block(std::size_t channels) const;

  /// Flat float encoding stored alongside checkpoints.
  Tensor<float> encode() const;
  static ModelConfig decode(const Tensor<float>& encoded);

  bool operator==(const ModelConfig&) const = default;
};

template <std::floating_point T>
struct Model {
  ModelConfig config;
  ParamSet<T> params;

  template <std::floating_point U>
  Model<U> cast() const {
    return Model<U>{config, params.template cast<U>()};
  }
};

/// Deterministic given `seed`. Level layout (C = base_channels):
///   embed  3x3 3->C
///   enc1.<i>   N1 blocks @ C        down1 3x3/2 C->2C
///   enc2.<i>   N2 blocks @ 2C       down2 3x3/2 2C->4C
///   latent.<i> N3 blocks @ 4C
///   up2 (nearest x2, 3x3 4C->2C), concat enc2, fuse2 1x1 4C->2C, dec2.<i> N2 blocks @ 2C
///   up1 (nearest x2, 3x3 2C->C),  concat enc1 -> 2C,             dec1.<i> N1 blocks @ 2C
///   output 3x3 2C->3, added to the input image.
Model<float> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// I_dehaze = F(I_haze) + I_haze. Input [B,3,H,W] with H, W divisible by 4.
template <std::floating_point T>
Var<T> forward(const ParamScope<T>& p, const ModelConfig& cfg, const Var<T>& input);

/// Inference convenience: constant parameters, no tape.
template <std::floating_point T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& input);

template <std::floating_point T>
std::size_t param_count(const Model<T>& model) {
  return model.params.numel();
}

/// Throws DimensionError unless `shape` is [B,3,H,W] with H, W divisible by 4.
void validate_input_shape(const Shape& shape);

}  // namespace rsdh

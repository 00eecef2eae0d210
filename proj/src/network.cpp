#include "rsdh/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace rsdh {

namespace {

constexpr std::size_t kConfigFields = 12;

void declare_conv(ParamBuilder& b, const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
  b.kaiming(name + ".weight", {cout, cin, k, k}, cin * k * k);
  b.constant(name + ".bias", {cout}, 0.0f);
}

template <std::floating_point T>
Var<T> conv(const Var<T>& x, const ParamScope<T>& p, const std::string& name, Conv2dOptions opt) {
  return conv2d(x, p(name + ".weight"), std::optional<Var<T>>(p(name + ".bias")), opt);
}

template <std::floating_point T>
Var<T> run_stage(Var<T> x, const ParamScope<T>& p, const std::string& name, std::size_t blocks, const VdbConfig& cfg) {
  for (std::size_t i = 0; i < blocks; ++i) x = vdb_forward(x, p.sub(name + "." + std::to_string(i)), cfg);
  return x;
}

}  // namespace

void ModelConfig::validate() const {
  if (base_channels < 4) throw std::invalid_argument("ModelConfig: base_channels must be >= 4");
  for (std::size_t n : block_counts) {
    if (n < 1) throw std::invalid_argument("ModelConfig: every level needs at least one block");
  }
  block(base_channels).validate();
}

VdbConfig ModelConfig::block(std::size_t channels) const {
  VdbConfig v;
  v.channels = channels;
  v.state_dim = state_dim;
  v.n_dirs = n_dirs;
  v.use_dconv = use_dconv;
  v.use_silu = use_silu;
  v.use_hadamard = use_hadamard;
  v.use_ffn = use_ffn;
  v.ffn_expand = ffn_expand;
  v.scan = scan;
  return v;
}

Tensor<float> ModelConfig::encode() const {
  return Tensor<float>({kConfigFields},
                       {static_cast<float>(base_channels), static_cast<float>(block_counts[0]),
                        static_cast<float>(block_counts[1]), static_cast<float>(block_counts[2]),
                        static_cast<float>(state_dim), static_cast<float>(n_dirs), use_dconv ? 1.0f : 0.0f,
                        use_silu ? 1.0f : 0.0f, use_hadamard ? 1.0f : 0.0f, use_ffn ? 1.0f : 0.0f,
                        static_cast<float>(ffn_expand), scan == ScanAlgorithm::Parallel ? 1.0f : 0.0f});
}

ModelConfig ModelConfig::decode(const Tensor<float>& e) {
  if (e.shape() != Shape{kConfigFields}) throw std::invalid_argument("ModelConfig::decode: unexpected encoding shape");
  auto count = [&](std::size_t i) {
    if (!(e[i] >= 0.0f) || e[i] != std::floor(e[i])) throw std::invalid_argument("ModelConfig::decode: bad field " + std::to_string(i));
    return static_cast<std::size_t>(e[i]);
  };
  ModelConfig c;
  c.base_channels = count(0);
  c.block_counts = {count(1), count(2), count(3)};
  c.state_dim = count(4);
  c.n_dirs = static_cast<int>(count(5));
  c.use_dconv = e[6] != 0.0f;
  c.use_silu = e[7] != 0.0f;
  c.use_hadamard = e[8] != 0.0f;
  c.use_ffn = e[9] != 0.0f;
  c.ffn_expand = static_cast<double>(e[10]);
  c.scan = e[11] != 0.0f ? ScanAlgorithm::Parallel : ScanAlgorithm::Sequential;
  c.validate();
  return c;
}

Model<float> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<float> model{cfg, {}};
  std::mt19937_64 rng(seed);
  ParamBuilder b(model.params, rng);
  const std::size_t C = cfg.base_channels;
  const auto [n1, n2, n3] = cfg.block_counts;

  auto blocks = [&](const std::string& name, std::size_t count, std::size_t channels) {
    for (std::size_t i = 0; i < count; ++i) {
      ParamBuilder sub = b.sub(name + "." + std::to_string(i));
      declare_vdb_params(sub, cfg.block(channels));
    }
  };

  declare_conv(b, "embed", C, ModelConfig::kInputChannels, 3);
  blocks("enc1", n1, C);
  declare_conv(b, "down1", 2 * C, C, 3);
  blocks("enc2", n2, 2 * C);
  declare_conv(b, "down2", 4 * C, 2 * C, 3);
  blocks("latent", n3, 4 * C);
  declare_conv(b, "up2", 2 * C, 4 * C, 3);
  declare_conv(b, "fuse2", 2 * C, 4 * C, 1);
  blocks("dec2", n2, 2 * C);
  declare_conv(b, "up1", C, 2 * C, 3);
  blocks("dec1", n1, 2 * C);
  declare_conv(b, "output", ModelConfig::kInputChannels, 2 * C, 3);
  return model;
}

void validate_input_shape(const Shape& s) {
  if (s.size() != 4) throw DimensionError("forward", -1, "input must be [B,3,H,W], got " + shape_to_string(s));
  if (s[1] != ModelConfig::kInputChannels) throw DimensionError("forward", 1, "expected 3 input channels, got " + std::to_string(s[1]));
  if (s[2] % 4 != 0) throw DimensionError("forward", 2, "height " + std::to_string(s[2]) + " must be divisible by 4");
  if (s[3] % 4 != 0) throw DimensionError("forward", 3, "width " + std::to_string(s[3]) + " must be divisible by 4");
}

template <std::floating_point T>
Var<T> forward(const ParamScope<T>& p, const ModelConfig& cfg, const Var<T>& input) {
  validate_input_shape(input.shape());
  const std::size_t C = cfg.base_channels;
  const auto [n1, n2, n3] = cfg.block_counts;
  const Conv2dOptions same{1, 1, 1}, down{2, 1, 1}, pointwise{1, 0, 1};

  const Var<T> e0 = conv(input, p, "embed", same);
  const Var<T> enc1 = run_stage(e0, p, "enc1", n1, cfg.block(C));
  const Var<T> enc2 = run_stage(conv(enc1, p, "down1", down), p, "enc2", n2, cfg.block(2 * C));
  const Var<T> latent = run_stage(conv(enc2, p, "down2", down), p, "latent", n3, cfg.block(4 * C));

  Var<T> d2 = conv(upsample_nearest2x(latent), p, "up2", same);
  d2 = conv(concat(d2, enc2, 1), p, "fuse2", pointwise);
  d2 = run_stage(d2, p, "dec2", n2, cfg.block(2 * C));

  Var<T> d1 = conv(upsample_nearest2x(d2), p, "up1", same);
  d1 = run_stage(concat(d1, enc1, 1), p, "dec1", n1, cfg.block(2 * C));

  return add(conv(d1, p, "output", same), input);
}

template <std::floating_point T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& input) {
  const auto bound = BoundParams<T>::constant(model.params);
  return forward(ParamScope<T>(bound), model.config, Var<T>(input)).value();
}

template Var<float> forward<float>(const ParamScope<float>&, const ModelConfig&, const Var<float>&);
template Var<double> forward<double>(const ParamScope<double>&, const ModelConfig&, const Var<double>&);
template Tensor<float> forward<float>(const Model<float>&, const Tensor<float>&);
template Tensor<double> forward<double>(const Model<double>&, const Tensor<double>&);

}  // namespace rsdh

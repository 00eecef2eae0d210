#include "rsdh/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace rsdh {

void VdbConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("VdbConfig: channels must be >= 1");
  if (state_dim < 1) throw std::invalid_argument("VdbConfig: state_dim must be >= 1");
  if (!(ffn_expand > 0.0)) throw std::invalid_argument("VdbConfig: ffn_expand must be > 0");
  (void)active_directions(n_dirs);
}

std::size_t VdbConfig::ffn_hidden() const {
  const auto h = static_cast<std::size_t>(std::lround(ffn_expand * static_cast<double>(channels)));
  return h < 1 ? 1 : h;
}

namespace {

void declare_conv(ParamBuilder& b, const std::string& name, std::size_t cout, std::size_t cin_per_group, std::size_t k) {
  b.kaiming(name + ".weight", {cout, cin_per_group, k, k}, cin_per_group * k * k);
  b.constant(name + ".bias", {cout}, 0.0f);
}

void declare_norm(ParamBuilder& b, const std::string& name, std::size_t c) {
  b.constant(name + ".weight", {c}, 1.0f);
  b.constant(name + ".bias", {c}, 0.0f);
}

template <std::floating_point T>
Var<T> conv(const Var<T>& x, const ParamScope<T>& p, const std::string& name, Conv2dOptions opt = {}) {
  return conv2d(x, p(name + ".weight"), std::optional<Var<T>>(p(name + ".bias")), opt);
}

template <std::floating_point T>
Var<T> norm(const Var<T>& x, const ParamScope<T>& p, const std::string& name) {
  return layer_norm(x, p(name + ".weight"), p(name + ".bias"), static_cast<T>(kLayerNormEps), 1);
}

}  // namespace

void declare_vdb_params(ParamBuilder& b, const VdbConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  declare_conv(b, "entry", c, c, 3);
  declare_norm(b, "norm1", c);
  ParamBuilder ssm = b.sub("ssm");
  declare_conv(ssm, "in1", c, c, 1);
  declare_conv(ssm, "in2", c, c, 1);
  if (cfg.use_dconv) declare_conv(ssm, "dconv", c, 1, 3);
  ParamBuilder dsm = ssm.sub("dsm");
  declare_dsm_params(dsm, c, cfg.state_dim, cfg.n_dirs);
  declare_norm(ssm, "norm", c);
  declare_conv(ssm, "out", c, c, 1);
  if (cfg.use_ffn) {
    const std::size_t h = cfg.ffn_hidden();
    declare_norm(b, "norm2", c);
    declare_conv(b, "ffn_dw", c, 1, 3);
    ParamBuilder ffn = b.sub("ffn");
    declare_conv(ffn, "expand", h, c, 1);
    declare_conv(ffn, "project", c, h, 1);
  }
}

std::size_t vdb_param_count(const VdbConfig& cfg) {
  ParamSet<float> params;
  std::mt19937_64 rng(0);
  ParamBuilder b(params, rng);
  declare_vdb_params(b, cfg);
  return params.numel();
}

template <std::floating_point T>
Var<T> ssm_dual_branch(const Var<T>& input, const ParamScope<T>& p, const VdbConfig& cfg) {
  const std::size_t c = input.dim(1);
  auto act = [&](const Var<T>& v) { return cfg.use_silu ? silu(v) : v; };
  const Var<T> first = act(conv(input, p, "in1"));
  Var<T> second = conv(input, p, "in2");
  if (cfg.use_dconv) second = conv(second, p, "dconv", {1, 1, c});
  second = act(second);
  second = norm(dsm_forward(second, p.sub("dsm"), cfg.n_dirs, cfg.scan), p, "norm");
  const Var<T> merged = cfg.use_hadamard ? mul(first, second) : add(first, second);
  return conv(merged, p, "out");
}

template <std::floating_point T>
Var<T> ffn_forward(const Var<T>& x, const ParamScope<T>& p) {
  return conv(silu(conv(x, p, "expand")), p, "project");
}

template <std::floating_point T>
Var<T> vdb_forward(const Var<T>& x, const ParamScope<T>& p, const VdbConfig& cfg) {
  if (x.shape().size() != 4) throw DimensionError("vdb_forward", -1, "input must be [B,C,H,W]");
  if (x.dim(1) != cfg.channels) {
    throw DimensionError("vdb_forward", 1,
                         "block has " + std::to_string(cfg.channels) + " channels, input has " + std::to_string(x.dim(1)));
  }
  const Var<T> e = add(x, conv(x, p, "entry", {1, 1, 1}));
  const Var<T> eh = add(e, ssm_dual_branch(norm(e, p, "norm1"), p.sub("ssm"), cfg));
  if (!cfg.use_ffn) return eh;
  const Var<T> z = conv(norm(eh, p, "norm2"), p, "ffn_dw", {1, 1, cfg.channels});
  return add(eh, ffn_forward(z, p.sub("ffn")));
}

#define RSDH_INSTANTIATE_BLOCKS(T)                                                              \
  template Var<T> ssm_dual_branch<T>(const Var<T>&, const ParamScope<T>&, const VdbConfig&); \
  template Var<T> ffn_forward<T>(const Var<T>&, const ParamScope<T>&);                         \
  template Var<T> vdb_forward<T>(const Var<T>&, const ParamScope<T>&, const VdbConfig&);

RSDH_INSTANTIATE_BLOCKS(float)
RSDH_INSTANTIATE_BLOCKS(double)

}  // namespace rsdh

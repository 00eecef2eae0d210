#pragma once

#include "rsdh/dsm.hpp"

namespace rsdh {

inline constexpr double kLayerNormEps = 1e-5;

/// Vision Dehamba Block configuration. The boolean switches reproduce the
/// component ablations: no FFN stage, no depth-wise conv, no SiLU in the SSM
/// branches, and sum instead of the Hadamard merge.
struct VdbConfig {
  std::size_t channels = 0;
  std::size_t state_dim = 16;
  int n_dirs = 4;
  bool use_dconv = true;
  bool use_silu = true;
  bool use_hadamard = true;
  bool use_ffn = true;
  double ffn_expand = 2.0;
  ScanAlgorithm scan = ScanAlgorithm::Sequential;

  void validate() const;
  std::size_t ffn_hidden() const;
};

/// Parameter layout of one block, relative to the builder's prefix:
///   entry.{weight,bias}                3x3 conv, applied residually
///   norm1.{weight,bias}
///   ssm.in1, ssm.in2, ssm.out         1x1 convs ("linear" over channels)
///   ssm.dconv                          depth-wise 3x3 (if use_dconv)
///   ssm.dsm.dir<k>.*                   per-direction SSM parameters
///   ssm.norm.{weight,bias}
///   norm2, ffn_dw, ffn.expand, ffn.project   (if use_ffn)
void declare_vdb_params(ParamBuilder& builder, const VdbConfig& cfg);

/// T_bf = act(Linear(T)); T_bs = Norm(DSM(act(DConv(Linear(T)))));
/// out = Linear(T_bf (*) T_bs), with (*) the Hadamard product or a sum.
template <std::floating_point T>
Var<T> ssm_dual_branch(const Var<T>& input, const ParamScope<T>& p, const VdbConfig& cfg);

/// Pointwise expand, SiLU, pointwise project (scope holds expand/project).
template <std::floating_point T>
Var<T> ffn_forward(const Var<T>& x, const ParamScope<T>& p);

/// E = x + Conv3x3(x); E' = E + SSM(Norm1(E)); out = E' + FFN(DWConv(Norm2(E'))).
template <std::floating_point T>
Var<T> vdb_forward(const Var<T>& x, const ParamScope<T>& p, const VdbConfig& cfg);

/// Number of parameters one block declares.
std::size_t vdb_param_count(const VdbConfig& cfg);

}  // namespace rsdh

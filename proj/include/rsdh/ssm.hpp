#pragma once

#include "rsdh/ops.hpp"
#include "rsdh/params.hpp"

namespace rsdh {

enum class ScanAlgorithm { Sequential, Parallel };

/// Per-direction state-space parameters. A is stored as log-magnitude so the
/// realized transition A = -exp(a_log) is always strictly negative.
template <std::floating_point T>
struct SsmParams {
  Tensor<T> a_log;      // [Dinner, N]
  Tensor<T> d;          // [Dinner] skip gain
  Tensor<T> dt_weight;  // [Dinner, Dinner]
  Tensor<T> dt_bias;    // [Dinner]
  Tensor<T> b_weight;   // [N, Dinner]
  Tensor<T> c_weight;   // [N, Dinner]

  std::size_t inner_dim() const { return d.dim(0); }
  std::size_t state_dim() const { return a_log.dim(1); }
  Tensor<T> realized_a() const;

  /// Reads "<prefix>a_log", "<prefix>d", ... from a parameter set.
  static SsmParams from(const ParamSet<T>& params, const std::string& prefix);
};

/// Declares one direction's parameters: A_log = log(1..N) per channel,
/// D = 1, dt_bias chosen so softplus(dt_bias) is log-uniform in
/// [1e-3, 1e-1], Kaiming-uniform projections.
void declare_ssm_params(ParamBuilder& builder, std::size_t inner_dim, std::size_t state_dim);

/// Token-level operands of the recurrence
///   h_t = exp(delta_t * A) h_{t-1} + (delta_t * B_t) x_t,   h_0 = 0
///   y_t = C_t . h_t + D x_t
template <std::floating_point T>
struct ScanInputs {
  Tensor<T> x;      // [B, L, Dinner]
  Tensor<T> delta;  // [B, L, Dinner], strictly positive
  Tensor<T> a;      // [Dinner, N]
  Tensor<T> b;      // [B, L, N]
  Tensor<T> c;      // [B, L, N]
  Tensor<T> d;      // [Dinner]
};

/// delta = softplus(x W_dt^T + dt_bias), B = x W_B^T, C = x W_C^T.
template <std::floating_point T>
ScanInputs<T> project_tokens(const Tensor<T>& x, const SsmParams<T>& params);

template <std::floating_point T>
struct Discretized {
  Tensor<T> abar;  // [B, L, Dinner, N]
  Tensor<T> bbar;  // [B, L, Dinner, N]
};

/// Abar = exp(delta * A) (zero-order hold), Bbar = delta * B (Euler).
template <std::floating_point T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b_tok);

/// Reference recurrence, one token at a time. If `states` is non-null it
/// receives every h_t as [B, L, Dinner, N].
template <std::floating_point T>
Tensor<T> selective_scan_seq(const ScanInputs<T>& in, Tensor<T>* states = nullptr);

/// Same recurrence evaluated as a work-efficient (up-sweep/down-sweep)
/// associative scan over affine maps h -> a h + b.
template <std::floating_point T>
Tensor<T> selective_scan_par(const ScanInputs<T>& in, Tensor<T>* states = nullptr);

template <std::floating_point T>
Tensor<T> selective_scan_seq(const Tensor<T>& x, const SsmParams<T>& params) {
  return selective_scan_seq(project_tokens(x, params));
}

template <std::floating_point T>
Tensor<T> selective_scan_par(const Tensor<T>& x, const SsmParams<T>& params) {
  return selective_scan_par(project_tokens(x, params));
}

/// Affine map h -> a*h + b; the scan's monoid element.
template <std::floating_point T>
struct ScanElement {
  T a = T(1);
  T b = T(0);
};

/// Composition "first, then second": (a2*a1, a2*b1 + b2).
template <std::floating_point T>
constexpr ScanElement<T> combine(const ScanElement<T>& first, const ScanElement<T>& second) {
  return {second.a * first.a, second.a * first.b + second.b};
}

/// Differentiable selective scan; gradients flow to every operand.
template <std::floating_point T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d, ScanAlgorithm algorithm = ScanAlgorithm::Sequential);

/// Projects tokens with one direction's parameters and scans them.
/// seq is [B, L, Dinner]; the parameter scope holds a_log, d, dt_weight, ...
template <std::floating_point T>
Var<T> ssm_sequence(const Var<T>& seq, const ParamScope<T>& p, ScanAlgorithm algorithm = ScanAlgorithm::Sequential);

}  // namespace rsdh

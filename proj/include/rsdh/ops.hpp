#pragma once

#include <optional>
#include <type_traits>

#include "rsdh/autodiff.hpp"

// Differentiable primitives. Every function accepts constants and tracked
// values alike; results are recorded only when an input is tracked.
// Kernels are instantiated for float (training/inference) and double
// (gradient checking).
namespace rsdh {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// input [B,Cin,H,W], weight [Cout,Cin/groups,k,k], bias [Cout] (optional).
/// Output [B,Cout,H',W'] with H' = (H + 2p - k)/stride + 1. Zero padding.
template <std::floating_point T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const std::type_identity_t<std::optional<Var<T>>>& bias,
               Conv2dOptions options = {});

/// Affine map over the last axis: x [..., in], weight [out, in], bias [out].
template <std::floating_point T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<std::optional<Var<T>>>& bias);

/// Normalizes `x` over `axis` independently at every other index, then
/// applies gamma/beta (both of length dim(axis)). Biased variance.
template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps, std::size_t axis);

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <std::floating_point T>
Var<T> scale(const Var<T>& a, T factor);
template <std::floating_point T>
Var<T> neg(const Var<T>& a);
template <std::floating_point T>
Var<T> exp(const Var<T>& a);
template <std::floating_point T>
Var<T> silu(const Var<T>& a);
template <std::floating_point T>
Var<T> softplus(const Var<T>& a);

template <std::floating_point T>
Var<T> sum(const Var<T>& a);
template <std::floating_point T>
Var<T> mean(const Var<T>& a);

/// Mean absolute difference; the gradient at ties is zero.
template <std::floating_point T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target);

/// Joins two tensors that agree on every axis except `axis`.
template <std::floating_point T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis);

/// Nearest-neighbour 2x upsampling of a [B,C,H,W] tensor.
template <std::floating_point T>
Var<T> upsample_nearest2x(const Var<T>& x);

template <std::floating_point T>
Var<T> reshape(const Var<T>& x, Shape shape);

// Scalar helpers shared with the kernels and the tests.
template <std::floating_point T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <std::floating_point T>
inline T softplus_scalar(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace rsdh

#pragma once

#include <array>
#include <vector>

#include "rsdh/ssm.hpp"

namespace rsdh {

/// Token orders of a 2D map. Reverse directions are exact reversals of their
/// forward counterparts.
enum class Direction : int { RowForward = 0, RowBackward = 1, ColForward = 2, ColBackward = 3 };

using Permutation = std::vector<std::size_t>;

/// perm[pos] = flat spatial index (y*W + x) visited at sequence position pos.
Permutation direction_permutation(Direction dir, std::size_t height, std::size_t width);
Permutation invert_permutation(const Permutation& perm);
bool is_bijection(const Permutation& perm);

/// Directions used for a given scan count: 1 -> {0}, 2 -> {0,1}, 4 -> {0,1,2,3}.
std::vector<Direction> active_directions(int n_dirs);

template <std::floating_point T>
struct DirectionalSequences {
  std::array<Tensor<T>, 4> seqs;          // [B, H*W, C] each
  std::array<Permutation, 4> perms;
  std::size_t height = 0, width = 0;
};

/// Gathers a [B,C,H,W] map into the four directional token sequences.
template <std::floating_point T>
DirectionalSequences<T> scan_expand(const Tensor<T>& map);

/// Scatters each sequence back through its permutation and sums the four
/// contributions as (d0 + d1) + (d2 + d3).
template <std::floating_point T>
Tensor<T> scan_merge(const DirectionalSequences<T>& seqs);

/// Differentiable gather: [B,C,H,W] -> [B,H*W,C] following `perm`.
template <std::floating_point T>
Var<T> expand_direction(const Var<T>& map, const Permutation& perm);

/// Differentiable scatter-and-sum of sequences back to [B,C,H,W].
template <std::floating_point T>
Var<T> merge_directions(const std::vector<Var<T>>& seqs, const std::vector<Permutation>& perms, std::size_t height,
                        std::size_t width);

/// Expands the map, runs one selective scan per active direction with that
/// direction's parameters (scope "dir<k>."), and merges.
template <std::floating_point T>
Var<T> dsm_forward(const Var<T>& map, const ParamScope<T>& p, int n_dirs,
                   ScanAlgorithm algorithm = ScanAlgorithm::Sequential);

void declare_dsm_params(ParamBuilder& builder, std::size_t channels, std::size_t state_dim, int n_dirs);

}  // namespace rsdh

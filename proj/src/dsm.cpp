#include "rsdh/dsm.hpp"

#include <algorithm>
#include <stdexcept>

namespace rsdh {

Permutation direction_permutation(Direction dir, std::size_t height, std::size_t width) {
  const std::size_t L = height * width;
  Permutation perm(L);
  const bool column_major = dir == Direction::ColForward || dir == Direction::ColBackward;
  for (std::size_t pos = 0; pos < L; ++pos) {
    perm[pos] = column_major ? (pos % height) * width + pos / height : pos;
  }
  if (dir == Direction::RowBackward || dir == Direction::ColBackward) std::reverse(perm.begin(), perm.end());
  return perm;
}

Permutation invert_permutation(const Permutation& perm) {
  Permutation inv(perm.size());
  for (std::size_t pos = 0; pos < perm.size(); ++pos) inv.at(perm[pos]) = pos;
  return inv;
}

bool is_bijection(const Permutation& perm) {
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t v : perm) {
    if (v >= perm.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

std::vector<Direction> active_directions(int n_dirs) {
  switch (n_dirs) {
    case 1: return {Direction::RowForward};
    case 2: return {Direction::RowForward, Direction::RowBackward};
    case 4: return {Direction::RowForward, Direction::RowBackward, Direction::ColForward, Direction::ColBackward};
    default: throw std::invalid_argument("n_dirs must be 1, 2 or 4, got " + std::to_string(n_dirs));
  }
}

namespace {

template <std::floating_point T>
void gather(const T* map, T* seq, const Permutation& perm, std::size_t B, std::size_t C, std::size_t L) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t pos = 0; pos < L; ++pos) {
      const T* src = map + b * C * L + perm[pos];
      T* dst = seq + (b * L + pos) * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] = src[c * L];
    }
}

template <std::floating_point T>
void scatter_add(const T* seq, T* map, const Permutation& perm, std::size_t B, std::size_t C, std::size_t L) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t pos = 0; pos < L; ++pos) {
      const T* src = seq + (b * L + pos) * C;
      T* dst = map + b * C * L + perm[pos];
      for (std::size_t c = 0; c < C; ++c) dst[c * L] += src[c];
    }
}

// Scatters each sequence into its own map, then sums maps pairwise so that
// identical contributions combine exactly ((s+s)+(s+s) == 4s).
template <std::floating_point T>
Tensor<T> merge_tree(const std::vector<const Tensor<T>*>& seqs, const std::vector<const Permutation*>& perms,
                     std::size_t B, std::size_t C, std::size_t H, std::size_t W) {
  const std::size_t L = H * W;
  std::vector<Tensor<T>> maps;
  maps.reserve(seqs.size());
  for (std::size_t d = 0; d < seqs.size(); ++d) {
    Tensor<T> m({B, C, H, W});
    scatter_add(seqs[d]->data().data(), m.data().data(), *perms[d], B, C, L);
    maps.push_back(std::move(m));
  }
  while (maps.size() > 1) {
    std::vector<Tensor<T>> next;
    for (std::size_t i = 0; i + 1 < maps.size(); i += 2) {
      Tensor<T> s = std::move(maps[i]);
      const Tensor<T>& o = maps[i + 1];
      for (std::size_t k = 0; k < s.numel(); ++k) s[k] = s[k] + o[k];
      next.push_back(std::move(s));
    }
    if (maps.size() % 2) next.push_back(std::move(maps.back()));
    maps = std::move(next);
  }
  return std::move(maps.front());
}

void check_map(const char* op, const Shape& s) {
  if (s.size() != 4) throw DimensionError(op, -1, "map must be [B,C,H,W], got " + shape_to_string(s));
}

}  // namespace

template <std::floating_point T>
DirectionalSequences<T> scan_expand(const Tensor<T>& map) {
  check_map("scan_expand", map.shape());
  const std::size_t B = map.dim(0), C = map.dim(1), H = map.dim(2), W = map.dim(3), L = H * W;
  DirectionalSequences<T> out;
  out.height = H;
  out.width = W;
  for (int d = 0; d < 4; ++d) {
    out.perms[d] = direction_permutation(static_cast<Direction>(d), H, W);
    out.seqs[d] = Tensor<T>({B, L, C});
    gather(map.data().data(), out.seqs[d].data().data(), out.perms[d], B, C, L);
  }
  return out;
}

template <std::floating_point T>
Tensor<T> scan_merge(const DirectionalSequences<T>& in) {
  const Shape& s0 = in.seqs[0].shape();
  if (s0.size() != 3) throw DimensionError("scan_merge", -1, "sequences must be [B,L,C]");
  const std::size_t L = in.height * in.width;
  if (s0[1] != L) throw DimensionError("scan_merge", 1, "sequence length " + std::to_string(s0[1]) + " != H*W " + std::to_string(L));
  std::vector<const Tensor<T>*> seqs;
  std::vector<const Permutation*> perms;
  for (int d = 0; d < 4; ++d) {
    require_shape("scan_merge", in.seqs[d].shape(), s0);
    if (in.perms[d].size() != L || !is_bijection(in.perms[d])) {
      throw std::invalid_argument("scan_merge: permutation " + std::to_string(d) + " is not a bijection on H*W");
    }
    seqs.push_back(&in.seqs[d]);
    perms.push_back(&in.perms[d]);
  }
  return merge_tree(seqs, perms, s0[0], s0[2], in.height, in.width);
}

template <std::floating_point T>
Var<T> expand_direction(const Var<T>& map, const Permutation& perm) {
  check_map("expand_direction", map.shape());
  const std::size_t B = map.dim(0), C = map.dim(1), L = map.dim(2) * map.dim(3);
  if (perm.size() != L) throw DimensionError("expand_direction", -1, "permutation length != H*W");
  Tensor<T> seq({B, L, C});
  gather(map.value().data().data(), seq.data().data(), perm, B, C, L);
  return record<T>(std::move(seq), {map}, [perm, B, C, L](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.tracked()) return;
    scatter_add(self.grad.data().data(), in.grad_buffer().data().data(), perm, B, C, L);
  });
}

template <std::floating_point T>
Var<T> merge_directions(const std::vector<Var<T>>& seqs, const std::vector<Permutation>& perms, std::size_t height,
                        std::size_t width) {
  if (seqs.empty() || seqs.size() != perms.size()) throw std::invalid_argument("merge_directions: need one permutation per sequence");
  const Shape s0 = seqs[0].shape();
  if (s0.size() != 3) throw DimensionError("merge_directions", -1, "sequences must be [B,L,C]");
  const std::size_t B = s0[0], L = s0[1], C = s0[2];
  if (L != height * width) throw DimensionError("merge_directions", 1, "sequence length != H*W");
  std::vector<const Tensor<T>*> tensors;
  std::vector<const Permutation*> pptr;
  for (std::size_t d = 0; d < seqs.size(); ++d) {
    require_shape("merge_directions", seqs[d].shape(), s0);
    if (perms[d].size() != L) throw DimensionError("merge_directions", -1, "permutation length != H*W");
    tensors.push_back(&seqs[d].value());
    pptr.push_back(&perms[d]);
  }
  Tensor<T> out = merge_tree(tensors, pptr, B, C, height, width);
  return record<T>(std::move(out), seqs, [perms, B, C, L](Node<T>& self) {
    for (std::size_t d = 0; d < self.inputs.size(); ++d) {
      auto& in = *self.inputs[d];
      if (!in.tracked()) continue;
      T* g = in.grad_buffer().data().data();
      const T* gy = self.grad.data().data();
      // gather the map gradient into sequence order, accumulating
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t pos = 0; pos < L; ++pos) {
          const T* src = gy + b * C * L + perms[d][pos];
          T* dst = g + (b * L + pos) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c * L];
        }
    }
  });
}

template <std::floating_point T>
Var<T> dsm_forward(const Var<T>& map, const ParamScope<T>& p, int n_dirs, ScanAlgorithm algorithm) {
  check_map("dsm_forward", map.shape());
  const std::size_t H = map.dim(2), W = map.dim(3);
  std::vector<Var<T>> outs;
  std::vector<Permutation> perms;
  for (Direction dir : active_directions(n_dirs)) {
    Permutation perm = direction_permutation(dir, H, W);
    const Var<T> seq = expand_direction(map, perm);
    outs.push_back(ssm_sequence(seq, p.sub("dir" + std::to_string(static_cast<int>(dir))), algorithm));
    perms.push_back(std::move(perm));
  }
  return merge_directions(outs, perms, H, W);
}

void declare_dsm_params(ParamBuilder& builder, std::size_t channels, std::size_t state_dim, int n_dirs) {
  for (Direction dir : active_directions(n_dirs)) {
    ParamBuilder sub = builder.sub("dir" + std::to_string(static_cast<int>(dir)));
    declare_ssm_params(sub, channels, state_dim);
  }
}

#define RSDH_INSTANTIATE_DSM(T)                                                                                   \
  template DirectionalSequences<T> scan_expand<T>(const Tensor<T>&);                                              \
  template Tensor<T> scan_merge<T>(const DirectionalSequences<T>&);                                               \
  template Var<T> expand_direction<T>(const Var<T>&, const Permutation&);                                         \
  template Var<T> merge_directions<T>(const std::vector<Var<T>>&, const std::vector<Permutation>&, std::size_t,   \
                                      std::size_t);                                                               \
  template Var<T> dsm_forward<T>(const Var<T>&, const ParamScope<T>&, int, ScanAlgorithm);

RSDH_INSTANTIATE_DSM(float)
RSDH_INSTANTIATE_DSM(double)

}  // namespace rsdh

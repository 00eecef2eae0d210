#include "rsdh/ops.hpp"

#include <algorithm>
#include <cmath>

namespace rsdh {

namespace {

template <std::floating_point T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    if (a.shape().size() != b.shape().size()) {
      throw DimensionError(op, -1, "rank mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    for (std::size_t i = 0; i < a.shape().size(); ++i) {
      if (a.shape()[i] != b.shape()[i]) {
        throw DimensionError(op, static_cast<int>(i),
                             shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
      }
    }
  }
}

template <std::floating_point T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
  return record<T>(std::move(out), {a}, [deriv](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.tracked()) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <std::floating_point T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const std::type_identity_t<std::optional<Var<T>>>& bias, Conv2dOptions opt) {
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4) throw DimensionError("conv2d", -1, "input must be [B,C,H,W], got " + shape_to_string(xs));
  if (ws.size() != 4) throw DimensionError("conv2d", -1, "weight must be [Cout,Cin/g,k,k], got " + shape_to_string(ws));
  if (opt.groups == 0 || opt.stride == 0) throw std::invalid_argument("conv2d: groups and stride must be >= 1");
  const std::size_t B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const std::size_t Cout = ws[0], k = ws[2];
  if (Cin % opt.groups != 0) {
    throw DimensionError("conv2d", 1, "input channels " + std::to_string(Cin) + " not divisible by groups " +
                                          std::to_string(opt.groups));
  }
  if (Cout % opt.groups != 0) {
    throw DimensionError("conv2d", 0, "output channels " + std::to_string(Cout) + " not divisible by groups " +
                                          std::to_string(opt.groups));
  }
  const std::size_t cin_g = Cin / opt.groups, cout_g = Cout / opt.groups;
  if (ws[1] != cin_g) {
    throw DimensionError("conv2d", 1, "weight expects " + std::to_string(ws[1]) + " input channels per group, input has " +
                                          std::to_string(cin_g));
  }
  if (ws[3] != k) throw DimensionError("conv2d", 3, "kernel must be square");
  if (H + 2 * opt.padding < k) throw DimensionError("conv2d", 2, "kernel larger than padded input height");
  if (W + 2 * opt.padding < k) throw DimensionError("conv2d", 3, "kernel larger than padded input width");
  if (bias) require_shape("conv2d bias", bias->shape(), Shape{Cout});

  const std::size_t Ho = (H + 2 * opt.padding - k) / opt.stride + 1;
  const std::size_t Wo = (W + 2 * opt.padding - k) / opt.stride + 1;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(opt.padding);
  const std::size_t stride = opt.stride;

  // Column range [lo, hi) of output x-positions whose input column
  // ox*stride + kx - pad lies inside the image.
  auto col_range = [=](std::size_t kx) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - pad;
    std::ptrdiff_t lo = 0;
    if (off < 0) lo = (-off + static_cast<std::ptrdiff_t>(stride) - 1) / static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(Wo);
    // need ox*stride + off <= W-1
    const std::ptrdiff_t max_ox = (static_cast<std::ptrdiff_t>(W) - 1 - off);
    if (max_ox < 0) return std::pair<std::size_t, std::size_t>{0, 0};
    hi = std::min<std::ptrdiff_t>(hi, max_ox / static_cast<std::ptrdiff_t>(stride) + 1);
    if (hi < lo) hi = lo;
    return std::pair<std::size_t, std::size_t>{static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  };

  Tensor<T> out({B, Cout, Ho, Wo});
  {
    const T* x = input.value().data().data();
    const T* w = weight.value().data().data();
    const T* bv = bias ? bias->value().data().data() : nullptr;
    T* o = out.data().data();
#pragma omp parallel for schedule(static) if (B * Cout * Ho * Wo > 16384)
    for (std::ptrdiff_t job = 0; job < static_cast<std::ptrdiff_t>(B * Cout); ++job) {
      const std::size_t b = static_cast<std::size_t>(job) / Cout, oc = static_cast<std::size_t>(job) % Cout;
      const std::size_t ic0 = (oc / cout_g) * cin_g;
      T* op = o + (b * Cout + oc) * Ho * Wo;
      std::fill(op, op + Ho * Wo, bv ? bv[oc] : T(0));
      for (std::size_t icl = 0; icl < cin_g; ++icl) {
        const T* xp = x + (b * Cin + ic0 + icl) * H * W;
        const T* wp = w + (oc * cin_g + icl) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = wp[ky * k + kx];
            const auto [lo, hi] = col_range(kx);
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - pad;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              const T* row = xp + static_cast<std::size_t>(iy) * W;
              T* orow = op + oy * Wo;
              if (stride == 1) {
                const T* src = row + (static_cast<std::ptrdiff_t>(lo) + xoff);
                T* dst = orow + lo;
                for (std::size_t j = 0; j < hi - lo; ++j) dst[j] += wv * src[j];
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * row[static_cast<std::ptrdiff_t>(ox * stride) + xoff];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Var<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return record<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    const T* gy = self.grad.data().data();
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    const T* x = xin.value.data().data();
    const T* w = win.value.data().data();

    if (xin.tracked()) {
      T* gx = xin.grad_buffer().data().data();
#pragma omp parallel for schedule(static) if (B * Cin * H * W > 16384)
      for (std::ptrdiff_t job = 0; job < static_cast<std::ptrdiff_t>(B * Cin); ++job) {
        const std::size_t b = static_cast<std::size_t>(job) / Cin, ic = static_cast<std::size_t>(job) % Cin;
        const std::size_t g = ic / cin_g, icl = ic % cin_g;
        T* gxp = gx + (b * Cin + ic) * H * W;
        for (std::size_t ocl = 0; ocl < cout_g; ++ocl) {
          const std::size_t oc = g * cout_g + ocl;
          const T* gyp = gy + (b * Cout + oc) * Ho * Wo;
          const T* wp = w + (oc * cin_g + icl) * k * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const T wv = wp[ky * k + kx];
              const auto [lo, hi] = col_range(kx);
              const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - pad;
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                T* grow = gxp + static_cast<std::size_t>(iy) * W;
                const T* gyrow = gyp + oy * Wo;
                if (stride == 1) {
                  T* dst = grow + (static_cast<std::ptrdiff_t>(lo) + xoff);
                  const T* src = gyrow + lo;
                  for (std::size_t j = 0; j < hi - lo; ++j) dst[j] += wv * src[j];
                } else {
                  for (std::size_t ox = lo; ox < hi; ++ox)
                    grow[static_cast<std::ptrdiff_t>(ox * stride) + xoff] += wv * gyrow[ox];
                }
              }
            }
          }
        }
      }
    }

    if (win.tracked()) {
      T* gw = win.grad_buffer().data().data();
#pragma omp parallel for schedule(static) if (B * Cout * Ho * Wo > 16384)
      for (std::ptrdiff_t oc_i = 0; oc_i < static_cast<std::ptrdiff_t>(Cout); ++oc_i) {
        const std::size_t oc = static_cast<std::size_t>(oc_i);
        const std::size_t ic0 = (oc / cout_g) * cin_g;
        for (std::size_t icl = 0; icl < cin_g; ++icl) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto [lo, hi] = col_range(kx);
              const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - pad;
              T acc = 0;
              for (std::size_t b = 0; b < B; ++b) {
                const T* xp = x + (b * Cin + ic0 + icl) * H * W;
                const T* gyp = gy + (b * Cout + oc) * Ho * Wo;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                  const T* row = xp + static_cast<std::size_t>(iy) * W;
                  const T* gyrow = gyp + oy * Wo;
                  for (std::size_t ox = lo; ox < hi; ++ox)
                    acc += gyrow[ox] * row[static_cast<std::ptrdiff_t>(ox * stride) + xoff];
                }
              }
              gw[((oc * cin_g + icl) * k + ky) * k + kx] += acc;
            }
          }
        }
      }
    }

    if (self.inputs.size() > 2 && self.inputs[2]->tracked()) {
      T* gb = self.inputs[2]->grad_buffer().data().data();
      for (std::size_t oc = 0; oc < Cout; ++oc) {
        T acc = 0;
        for (std::size_t b = 0; b < B; ++b) {
          const T* gyp = gy + (b * Cout + oc) * Ho * Wo;
          for (std::size_t i = 0; i < Ho * Wo; ++i) acc += gyp[i];
        }
        gb[oc] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// linear

template <std::floating_point T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<std::optional<Var<T>>>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.empty()) throw DimensionError("linear", -1, "input must have rank >= 1");
  if (ws.size() != 2) throw DimensionError("linear", -1, "weight must be [out,in], got " + shape_to_string(ws));
  const std::size_t in = xs.back(), outf = ws[0];
  if (ws[1] != in) {
    throw DimensionError("linear", static_cast<int>(xs.size() - 1),
                         "input features " + std::to_string(in) + " but weight expects " + std::to_string(ws[1]));
  }
  if (bias) require_shape("linear bias", bias->shape(), Shape{outf});
  const std::size_t rows = x.value().numel() / in;

  Shape os = xs;
  os.back() = outf;
  Tensor<T> out(os);
  {
    // Transposed weight keeps the inner loop contiguous over outputs.
    std::vector<T> wt(in * outf);
    const T* w = weight.value().data().data();
    for (std::size_t o = 0; o < outf; ++o)
      for (std::size_t i = 0; i < in; ++i) wt[i * outf + o] = w[o * in + i];
    const T* xp = x.value().data().data();
    const T* bv = bias ? bias->value().data().data() : nullptr;
    T* op = out.data().data();
#pragma omp parallel for schedule(static) if (rows * outf * in > 65536)
    for (std::ptrdiff_t r_i = 0; r_i < static_cast<std::ptrdiff_t>(rows); ++r_i) {
      const std::size_t r = static_cast<std::size_t>(r_i);
      T* orow = op + r * outf;
      for (std::size_t o = 0; o < outf; ++o) orow[o] = bv ? bv[o] : T(0);
      const T* xr = xp + r * in;
      for (std::size_t i = 0; i < in; ++i) {
        const T xv = xr[i];
        const T* wr = wt.data() + i * outf;
        for (std::size_t o = 0; o < outf; ++o) orow[o] += xv * wr[o];
      }
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return record<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
    const T* gy = self.grad.data().data();
    auto& xin = *self.inputs[0];
    auto& win = *self.inputs[1];
    const T* xp = xin.value.data().data();
    const T* w = win.value.data().data();
    if (xin.tracked()) {
      T* gx = xin.grad_buffer().data().data();
#pragma omp parallel for schedule(static) if (rows * outf * in > 65536)
      for (std::ptrdiff_t r_i = 0; r_i < static_cast<std::ptrdiff_t>(rows); ++r_i) {
        const std::size_t r = static_cast<std::size_t>(r_i);
        T* gxr = gx + r * in;
        for (std::size_t o = 0; o < outf; ++o) {
          const T gv = gy[r * outf + o];
          const T* wr = w + o * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += gv * wr[i];
        }
      }
    }
    if (win.tracked()) {
      T* gw = win.grad_buffer().data().data();
#pragma omp parallel for schedule(static) if (rows * outf * in > 65536)
      for (std::ptrdiff_t o_i = 0; o_i < static_cast<std::ptrdiff_t>(outf); ++o_i) {
        const std::size_t o = static_cast<std::size_t>(o_i);
        T* gwr = gw + o * in;
        for (std::size_t r = 0; r < rows; ++r) {
          const T gv = gy[r * outf + o];
          const T* xr = xp + r * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += gv * xr[i];
        }
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->tracked()) {
      T* gb = self.inputs[2]->grad_buffer().data().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outf; ++o) gb[o] += gy[r * outf + o];
    }
  });
}

// ---------------------------------------------------------------------------
// layer_norm

template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps, std::size_t axis) {
  const auto& xs = x.shape();
  if (axis >= xs.size()) throw DimensionError("layer_norm", static_cast<int>(axis), "axis out of range for " + shape_to_string(xs));
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be > 0");
  const AxisSplit s = split_axis(xs, axis);
  if (gamma.shape() != Shape{s.extent}) {
    throw DimensionError("layer_norm", static_cast<int>(axis),
                         "gamma has shape " + shape_to_string(gamma.shape()) + ", expected [" + std::to_string(s.extent) + "]");
  }
  if (beta.shape() != Shape{s.extent}) {
    throw DimensionError("layer_norm", static_cast<int>(axis),
                         "beta has shape " + shape_to_string(beta.shape()) + ", expected [" + std::to_string(s.extent) + "]");
  }

  const std::size_t C = s.extent, inner = s.inner, outer = s.outer;
  std::vector<T> mean(outer * inner, T(0)), rstd(outer * inner, T(0));
  Tensor<T> out(xs);
  const T* xp = x.value().data().data();
  const T* gp = gamma.value().data().data();
  const T* bp = beta.value().data().data();
  T* op = out.data().data();
  const T invC = T(1) / static_cast<T>(C);

#pragma omp parallel for schedule(static) if (outer * C * inner > 65536)
  for (std::ptrdiff_t o_i = 0; o_i < static_cast<std::ptrdiff_t>(outer); ++o_i) {
    const std::size_t o = static_cast<std::size_t>(o_i);
    const T* xb = xp + o * C * inner;
    T* ob = op + o * C * inner;
    T* mu = mean.data() + o * inner;
    T* rs = rstd.data() + o * inner;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < inner; ++p) mu[p] += xb[c * inner + p];
    for (std::size_t p = 0; p < inner; ++p) mu[p] *= invC;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < inner; ++p) {
        const T d = xb[c * inner + p] - mu[p];
        rs[p] += d * d;
      }
    for (std::size_t p = 0; p < inner; ++p) rs[p] = T(1) / std::sqrt(rs[p] * invC + eps);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < inner; ++p)
        ob[c * inner + p] = (xb[c * inner + p] - mu[p]) * rs[p] * gp[c] + bp[c];
  }

  return record<T>(std::move(out), {x, gamma, beta},
                   [=, mean = std::move(mean), rstd = std::move(rstd)](Node<T>& self) {
    const T* gy = self.grad.data().data();
    auto& xin = *self.inputs[0];
    auto& gin = *self.inputs[1];
    auto& bin = *self.inputs[2];
    const T* xv = xin.value.data().data();
    const T* gam = gin.value.data().data();
    if (xin.tracked()) {
      T* gx = xin.grad_buffer().data().data();
#pragma omp parallel for schedule(static) if (outer * C * inner > 65536)
      for (std::ptrdiff_t o_i = 0; o_i < static_cast<std::ptrdiff_t>(outer); ++o_i) {
        const std::size_t o = static_cast<std::size_t>(o_i);
        const T* xb = xv + o * C * inner;
        const T* gyb = gy + o * C * inner;
        T* gxb = gx + o * C * inner;
        const T* mu = mean.data() + o * inner;
        const T* rs = rstd.data() + o * inner;
        std::vector<T> m1(inner, T(0)), m2(inner, T(0));
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < inner; ++p) {
            const T gh = gyb[c * inner + p] * gam[c];
            const T xh = (xb[c * inner + p] - mu[p]) * rs[p];
            m1[p] += gh;
            m2[p] += gh * xh;
          }
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < inner; ++p) {
            const T gh = gyb[c * inner + p] * gam[c];
            const T xh = (xb[c * inner + p] - mu[p]) * rs[p];
            gxb[c * inner + p] += rs[p] * (gh - m1[p] * invC - xh * m2[p] * invC);
          }
      }
    }
    if (gin.tracked() || bin.tracked()) {
      std::vector<T> gg(C, T(0)), gb(C, T(0));
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t base = (o * C + c) * inner;
          T ag = 0, ab = 0;
          for (std::size_t p = 0; p < inner; ++p) {
            const T xh = (xv[base + p] - mean[o * inner + p]) * rstd[o * inner + p];
            ag += gy[base + p] * xh;
            ab += gy[base + p];
          }
          gg[c] += ag;
          gb[c] += ab;
        }
      if (gin.tracked()) {
        auto& g = gin.grad_buffer();
        for (std::size_t c = 0; c < C; ++c) g[c] += gg[c];
      }
      if (bin.tracked()) {
        auto& g = bin.grad_buffer();
        for (std::size_t c = 0; c < C; ++c) g[c] += gb[c];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->tracked()) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.inputs[0]->tracked()) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->tracked()) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& ia = *self.inputs[0];
    auto& ib = *self.inputs[1];
    if (ia.tracked()) {
      auto& g = ia.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * ib.value[i];
    }
    if (ib.tracked()) {
      auto& g = ib.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * ia.value[i];
    }
  });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary<T>(
      a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <std::floating_point T>
Var<T> neg(const Var<T>& a) {
  return unary<T>(
      a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <std::floating_point T>
Var<T> exp(const Var<T>& a) {
  return unary<T>(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <std::floating_point T>
Var<T> silu(const Var<T>& a) {
  return unary<T>(
      a, [](T x) { return x * sigmoid_scalar(x); },
      [](T x, T) {
        const T s = sigmoid_scalar(x);
        return s + x * s * (T(1) - s);
      });
}

template <std::floating_point T>
Var<T> softplus(const Var<T>& a) {
  return unary<T>(
      a, [](T x) { return softplus_scalar(x); }, [](T x, T) { return sigmoid_scalar(x); });
}

// ---------------------------------------------------------------------------
// reductions

template <std::floating_point T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  return record<T>(Tensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.tracked()) return;
    auto& g = in.grad_buffer();
    const T gv = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().numel());
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  return record<T>(Tensor<T>::scalar(acc / n), {a}, [n](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.tracked()) return;
    auto& g = in.grad_buffer();
    const T gv = self.grad[0] / n;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

template <std::floating_point T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  require_same_shape("l1_loss", pred, target);
  const auto& p = pred.value();
  const auto& t = target.value();
  const T n = static_cast<T>(p.numel());
  T acc = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) acc += std::abs(p[i] - t[i]);
  return record<T>(Tensor<T>::scalar(acc / n), {pred, target}, [n](Node<T>& self) {
    auto& ip = *self.inputs[0];
    auto& it = *self.inputs[1];
    const T gv = self.grad[0] / n;
    auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
    if (ip.tracked()) {
      auto& g = ip.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gv * sign(ip.value[i] - it.value[i]);
    }
    if (it.tracked()) {
      auto& g = it.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= gv * sign(ip.value[i] - it.value[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// layout

template <std::floating_point T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != bs.size()) throw DimensionError("concat", -1, "rank mismatch");
  if (axis >= as.size()) throw DimensionError("concat", static_cast<int>(axis), "axis out of range");
  for (std::size_t i = 0; i < as.size(); ++i) {
    if (i != axis && as[i] != bs[i]) {
      throw DimensionError("concat", static_cast<int>(i), shape_to_string(as) + " vs " + shape_to_string(bs));
    }
  }
  const AxisSplit sa = split_axis(as, axis), sb = split_axis(bs, axis);
  Shape os = as;
  os[axis] = as[axis] + bs[axis];
  Tensor<T> out(os);
  const std::size_t ca = sa.extent * sa.inner, cb = sb.extent * sb.inner;
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(a.value().data().data() + o * ca, ca, out.data().data() + o * (ca + cb));
    std::copy_n(b.value().data().data() + o * cb, cb, out.data().data() + o * (ca + cb) + ca);
  }
  return record<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    const T* gy = self.grad.data().data();
    if (self.inputs[0]->tracked()) {
      T* g = self.inputs[0]->grad_buffer().data().data();
      for (std::size_t o = 0; o < sa.outer; ++o)
        for (std::size_t i = 0; i < ca; ++i) g[o * ca + i] += gy[o * (ca + cb) + i];
    }
    if (self.inputs[1]->tracked()) {
      T* g = self.inputs[1]->grad_buffer().data().data();
      for (std::size_t o = 0; o < sa.outer; ++o)
        for (std::size_t i = 0; i < cb; ++i) g[o * cb + i] += gy[o * (ca + cb) + ca + i];
    }
  });
}

template <std::floating_point T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw DimensionError("upsample_nearest2x", -1, "input must be [B,C,H,W]");
  const std::size_t planes = xs[0] * xs[1], H = xs[2], W = xs[3];
  Tensor<T> out({xs[0], xs[1], 2 * H, 2 * W});
  const T* xp = x.value().data().data();
  T* op = out.data().data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xx = 0; xx < 2 * W; ++xx) op[(pl * 2 * H + y) * 2 * W + xx] = xp[(pl * H + y / 2) * W + xx / 2];
  return record<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.tracked()) return;
    T* g = in.grad_buffer().data().data();
    const T* gy = self.grad.data().data();
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const std::size_t r0 = (pl * 2 * H + 2 * y) * 2 * W + 2 * xx, r1 = r0 + 2 * W;
          g[(pl * H + y) * W + xx] += (gy[r0] + gy[r0 + 1]) + (gy[r1] + gy[r1 + 1]);
        }
  });
}

template <std::floating_point T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.tracked()) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

#define RSDH_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, Conv2dOptions);     \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);                    \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T, std::size_t);              \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> scale<T>(const Var<T>&, T);                                                               \
  template Var<T> neg<T>(const Var<T>&);                                                                    \
  template Var<T> exp<T>(const Var<T>&);                                                                    \
  template Var<T> silu<T>(const Var<T>&);                                                                   \
  template Var<T> softplus<T>(const Var<T>&);                                                               \
  template Var<T> sum<T>(const Var<T>&);                                                                    \
  template Var<T> mean<T>(const Var<T>&);                                                                   \
  template Var<T> l1_loss<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> concat<T>(const Var<T>&, const Var<T>&, std::size_t);                                     \
  template Var<T> upsample_nearest2x<T>(const Var<T>&);                                                     \
  template Var<T> reshape<T>(const Var<T>&, Shape);

RSDH_INSTANTIATE_OPS(float)
RSDH_INSTANTIATE_OPS(double)

}  // namespace rsdh

#include "rsdh/ssm.hpp"

#include <cmath>
#include <random>

namespace rsdh {

namespace {

struct ScanDims {
  std::size_t batch, len, inner, state;
};

template <std::floating_point T>
ScanDims check_scan_inputs(const char* op, const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a,
                           const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d) {
  if (x.rank() != 3) throw DimensionError(op, -1, "x must be [B,L,D], got " + shape_to_string(x.shape()));
  if (a.rank() != 2) throw DimensionError(op, -1, "A must be [D,N], got " + shape_to_string(a.shape()));
  const ScanDims s{x.dim(0), x.dim(1), x.dim(2), a.dim(1)};
  require_shape(std::string(op) + " delta", delta.shape(), x.shape());
  require_shape(std::string(op) + " A", a.shape(), {s.inner, s.state});
  require_shape(std::string(op) + " B", b.shape(), {s.batch, s.len, s.state});
  require_shape(std::string(op) + " C", c.shape(), {s.batch, s.len, s.state});
  require_shape(std::string(op) + " D", d.shape(), {s.inner});
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    if (!(delta[i] > T(0))) {
      const std::size_t ch = i % s.inner, t = (i / s.inner) % s.len, bb = i / (s.inner * s.len);
      const std::string msg = std::string(op) + ": delta must be > 0, got " + std::to_string(delta[i]) + " at (batch " +
                              std::to_string(bb) + ", step " + std::to_string(t) + ", channel " + std::to_string(ch) + ")";
      if (std::isnan(delta[i])) throw NumericError(msg);
      throw std::invalid_argument(msg);
    }
  }
  return s;
}

template <std::floating_point T>
void check_row_finite(const char* op, const T* y, std::size_t n, std::size_t batch, std::size_t step) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i])) {
      throw NumericError(std::string(op) + ": non-finite state at step " + std::to_string(step) + " (batch " +
                         std::to_string(batch) + ", channel " + std::to_string(i) + ")");
    }
  }
}

// y_t = C_t . h_t + D x_t for one token, given h_t for all channels.
template <std::floating_point T>
void emit_outputs(const T* h, const T* cr, const T* xr, const T* d, T* yr, std::size_t inner, std::size_t state) {
  for (std::size_t ch = 0; ch < inner; ++ch) {
    const T* hc = h + ch * state;
    T acc = 0;
    for (std::size_t n = 0; n < state; ++n) acc += cr[n] * hc[n];
    yr[ch] = acc + d[ch] * xr[ch];
  }
}

}  // namespace

template <std::floating_point T>
Tensor<T> SsmParams<T>::realized_a() const {
  Tensor<T> out(a_log.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = -std::exp(a_log[i]);
  return out;
}

template <std::floating_point T>
SsmParams<T> SsmParams<T>::from(const ParamSet<T>& params, const std::string& prefix) {
  return SsmParams<T>{params.at(prefix + "a_log"),     params.at(prefix + "d"),
                      params.at(prefix + "dt_weight"), params.at(prefix + "dt_bias"),
                      params.at(prefix + "b_weight"),  params.at(prefix + "c_weight")};
}

void declare_ssm_params(ParamBuilder& builder, std::size_t inner_dim, std::size_t state_dim) {
  Tensor<float> a_log({inner_dim, state_dim});
  for (std::size_t ch = 0; ch < inner_dim; ++ch)
    for (std::size_t n = 0; n < state_dim; ++n)
      a_log[ch * state_dim + n] = static_cast<float>(std::log(static_cast<double>(n + 1)));
  builder.add("a_log", std::move(a_log));
  builder.constant("d", {inner_dim}, 1.0f);
  builder.kaiming("dt_weight", {inner_dim, inner_dim}, inner_dim);

  // softplus^{-1}(dt) = dt + log(1 - exp(-dt)) for dt log-uniform in [1e-3, 1e-1].
  Tensor<float> dt_bias({inner_dim});
  std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
  for (auto& v : dt_bias.data()) {
    const double dt = std::exp(u(builder.rng()));
    v = static_cast<float>(dt + std::log(-std::expm1(-dt)));
  }
  builder.add("dt_bias", std::move(dt_bias));
  builder.kaiming("b_weight", {state_dim, inner_dim}, inner_dim);
  builder.kaiming("c_weight", {state_dim, inner_dim}, inner_dim);
}

template <std::floating_point T>
ScanInputs<T> project_tokens(const Tensor<T>& x, const SsmParams<T>& params) {
  if (x.rank() != 3) throw DimensionError("project_tokens", -1, "x must be [B,L,D], got " + shape_to_string(x.shape()));
  const Var<T> xv(x);
  Tensor<T> delta = softplus(linear(xv, Var<T>(params.dt_weight), std::optional<Var<T>>(Var<T>(params.dt_bias)))).value();
  Tensor<T> b = linear(xv, Var<T>(params.b_weight), std::optional<Var<T>>{}).value();
  Tensor<T> c = linear(xv, Var<T>(params.c_weight), std::optional<Var<T>>{}).value();
  return ScanInputs<T>{x, std::move(delta), params.realized_a(), std::move(b), std::move(c), params.d};
}

template <std::floating_point T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b_tok) {
  if (delta.rank() != 3) throw DimensionError("discretize", -1, "delta must be [B,L,D]");
  if (a.rank() != 2) throw DimensionError("discretize", -1, "A must be [D,N]");
  const std::size_t B = delta.dim(0), L = delta.dim(1), D = delta.dim(2), N = a.dim(1);
  require_shape("discretize A", a.shape(), {D, N});
  require_shape("discretize B", b_tok.shape(), {B, L, N});
  Discretized<T> out{Tensor<T>({B, L, D, N}), Tensor<T>({B, L, D, N})};
  for (std::size_t bl = 0; bl < B * L; ++bl) {
    for (std::size_t ch = 0; ch < D; ++ch) {
      const T dt = delta[bl * D + ch];
      if (std::isnan(dt)) throw NumericError("discretize: delta is NaN");
      if (!(dt > T(0))) throw std::invalid_argument("discretize: delta must be > 0, got " + std::to_string(dt));
      for (std::size_t n = 0; n < N; ++n) {
        out.abar[(bl * D + ch) * N + n] = std::exp(dt * a[ch * N + n]);
        out.bbar[(bl * D + ch) * N + n] = dt * b_tok[bl * N + n];
      }
    }
  }
  return out;
}

template <std::floating_point T>
Tensor<T> selective_scan_seq(const ScanInputs<T>& in, Tensor<T>* states) {
  const ScanDims s = check_scan_inputs("selective_scan_seq", in.x, in.delta, in.a, in.b, in.c, in.d);
  const std::size_t DN = s.inner * s.state;
  Tensor<T> y({s.batch, s.len, s.inner});
  if (states) *states = Tensor<T>({s.batch, s.len, s.inner, s.state});

  const T* x = in.x.data().data();
  const T* delta = in.delta.data().data();
  const T* A = in.a.data().data();
  const T* Bt = in.b.data().data();
  const T* Ct = in.c.data().data();
  const T* D = in.d.data().data();

  for (std::size_t b = 0; b < s.batch; ++b) {
    std::vector<T> h(DN, T(0));
    for (std::size_t t = 0; t < s.len; ++t) {
      const std::size_t tok = b * s.len + t;
      const T* xr = x + tok * s.inner;
      const T* dr = delta + tok * s.inner;
      const T* br = Bt + tok * s.state;
      for (std::size_t ch = 0; ch < s.inner; ++ch) {
        const T dt = dr[ch], xv = xr[ch];
        T* hc = h.data() + ch * s.state;
        const T* ac = A + ch * s.state;
        for (std::size_t n = 0; n < s.state; ++n) hc[n] = std::exp(dt * ac[n]) * hc[n] + (dt * br[n]) * xv;
      }
      T* yr = y.data().data() + tok * s.inner;
      emit_outputs(h.data(), Ct + tok * s.state, xr, D, yr, s.inner, s.state);
      check_row_finite("selective_scan_seq", yr, s.inner, b, t);
      if (states) std::copy(h.begin(), h.end(), states->data().data() + tok * DN);
    }
  }
  return y;
}

template <std::floating_point T>
Tensor<T> selective_scan_par(const ScanInputs<T>& in, Tensor<T>* states) {
  const ScanDims s = check_scan_inputs("selective_scan_par", in.x, in.delta, in.a, in.b, in.c, in.d);
  const std::size_t DN = s.inner * s.state;
  std::size_t padded = 1;
  while (padded < s.len) padded <<= 1;

  Tensor<T> y({s.batch, s.len, s.inner});
  if (states) *states = Tensor<T>({s.batch, s.len, s.inner, s.state});

  const T* x = in.x.data().data();
  const T* delta = in.delta.data().data();
  const T* A = in.a.data().data();
  const T* Bt = in.b.data().data();

  // Lane-major tree: every combine runs across all Dinner*N lanes at once.
  std::vector<T> ea(padded * DN), eb(padded * DN), pa(padded * DN), pb(padded * DN);

  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t t = 0; t < padded; ++t) {
      T* at = ea.data() + t * DN;
      T* bt = eb.data() + t * DN;
      if (t >= s.len) {
        std::fill(at, at + DN, T(1));
        std::fill(bt, bt + DN, T(0));
        continue;
      }
      const std::size_t tok = b * s.len + t;
      for (std::size_t ch = 0; ch < s.inner; ++ch) {
        const T dt = delta[tok * s.inner + ch], xv = x[tok * s.inner + ch];
        for (std::size_t n = 0; n < s.state; ++n) {
          at[ch * s.state + n] = std::exp(dt * A[ch * s.state + n]);
          bt[ch * s.state + n] = (dt * Bt[tok * s.state + n]) * xv;
        }
      }
    }
    pa = ea;
    pb = eb;

    // Up-sweep: node i accumulates the span (i - 2d, i].
    for (std::size_t d = 1; d < padded; d <<= 1) {
      const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(padded / (2 * d));
#pragma omp parallel for schedule(static) if (count * static_cast<std::ptrdiff_t>(DN) > 65536)
      for (std::ptrdiff_t k = 0; k < count; ++k) {
        const std::size_t i = static_cast<std::size_t>(k) * 2 * d + 2 * d - 1;
        T* a2 = pa.data() + i * DN;
        T* b2 = pb.data() + i * DN;
        const T* a1 = pa.data() + (i - d) * DN;
        const T* b1 = pb.data() + (i - d) * DN;
        for (std::size_t j = 0; j < DN; ++j) {
          b2[j] = a2[j] * b1[j] + b2[j];
          a2[j] = a2[j] * a1[j];
        }
      }
    }

    // Down-sweep to exclusive prefixes.
    std::fill(pa.begin() + static_cast<std::ptrdiff_t>((padded - 1) * DN), pa.end(), T(1));
    std::fill(pb.begin() + static_cast<std::ptrdiff_t>((padded - 1) * DN), pb.end(), T(0));
    for (std::size_t d = padded / 2; d >= 1; d >>= 1) {
      const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(padded / (2 * d));
#pragma omp parallel for schedule(static) if (count * static_cast<std::ptrdiff_t>(DN) > 65536)
      for (std::ptrdiff_t k = 0; k < count; ++k) {
        const std::size_t i = static_cast<std::size_t>(k) * 2 * d + 2 * d - 1;
        T* ar = pa.data() + i * DN;
        T* br = pb.data() + i * DN;
        T* al = pa.data() + (i - d) * DN;
        T* bl = pb.data() + (i - d) * DN;
        for (std::size_t j = 0; j < DN; ++j) {
          // left <- prefix(right); right <- combine(prefix(right), left-subtree)
          const T la = al[j], lb = bl[j];
          al[j] = ar[j];
          bl[j] = br[j];
          br[j] = la * br[j] + lb;
          ar[j] = la * ar[j];
        }
      }
      if (d == 1) break;
    }

    // Inclusive prefix applied to h_0 = 0 is b of combine(exclusive_t, e_t).
    std::vector<T> h(DN);
    for (std::size_t t = 0; t < s.len; ++t) {
      const std::size_t tok = b * s.len + t;
      const T* excl_b = pb.data() + t * DN;
      const T* ea_t = ea.data() + t * DN;
      const T* eb_t = eb.data() + t * DN;
      for (std::size_t j = 0; j < DN; ++j) h[j] = ea_t[j] * excl_b[j] + eb_t[j];
      T* yr = y.data().data() + tok * s.inner;
      emit_outputs(h.data(), in.c.data().data() + tok * s.state, x + tok * s.inner, in.d.data().data(), yr, s.inner,
                   s.state);
      check_row_finite("selective_scan_par", yr, s.inner, b, t);
      if (states) std::copy(h.begin(), h.end(), states->data().data() + tok * DN);
    }
  }
  return y;
}

template <std::floating_point T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d, ScanAlgorithm algorithm) {
  ScanInputs<T> in{x.value(), delta.value(), a.value(), b.value(), c.value(), d.value()};
  const bool need_states = x.tracked() || delta.tracked() || a.tracked() || b.tracked() || c.tracked() || d.tracked();
  Tensor<T> states;
  Tensor<T> y = algorithm == ScanAlgorithm::Parallel ? selective_scan_par(in, need_states ? &states : nullptr)
                                                     : selective_scan_seq(in, need_states ? &states : nullptr);
  const ScanDims s{x.dim(0), x.dim(1), x.dim(2), a.dim(1)};

  return record<T>(std::move(y), {x, delta, a, b, c, d}, [s, states = std::move(states)](Node<T>& self) {
    const std::size_t DN = s.inner * s.state;
    const T* gy = self.grad.data().data();
    const T* x = self.inputs[0]->value.data().data();
    const T* delta = self.inputs[1]->value.data().data();
    const T* A = self.inputs[2]->value.data().data();
    const T* Bt = self.inputs[3]->value.data().data();
    const T* D = self.inputs[5]->value.data().data();
    const T* H = states.data().data();

    // Dense scratch gradients; copied into tracked inputs at the end.
    std::vector<T> gx(s.batch * s.len * s.inner, T(0)), gdelta(gx.size(), T(0));
    std::vector<T> gB(s.batch * s.len * s.state, T(0)), gC(gB.size(), T(0));
    std::vector<T> gA_batch(s.batch * DN, T(0)), gD_batch(s.batch * s.inner, T(0));
    const T* Ct = self.inputs[4]->value.data().data();

#pragma omp parallel for schedule(static) if (s.batch > 1 && s.len * DN > 16384)
    for (std::ptrdiff_t b_i = 0; b_i < static_cast<std::ptrdiff_t>(s.batch); ++b_i) {
      const std::size_t b = static_cast<std::size_t>(b_i);
      std::vector<T> g(DN, T(0));
      T* gA = gA_batch.data() + b * DN;
      T* gD = gD_batch.data() + b * s.inner;
      for (std::size_t t = s.len; t-- > 0;) {
        const std::size_t tok = b * s.len + t;
        const T* ht = H + tok * DN;
        const T* hp = t > 0 ? H + (tok - 1) * DN : nullptr;
        const T* br = Bt + tok * s.state;
        const T* cr = Ct + tok * s.state;
        T* gbr = gB.data() + tok * s.state;
        T* gcr = gC.data() + tok * s.state;
        for (std::size_t ch = 0; ch < s.inner; ++ch) {
          const std::size_t e = tok * s.inner + ch;
          const T gyv = gy[e], xv = x[e], dt = delta[e];
          gD[ch] += gyv * xv;
          T gxv = gyv * D[ch];
          T gdt = 0;
          T* gc = g.data() + ch * s.state;
          const T* ac = A + ch * s.state;
          T* gac = gA + ch * s.state;
          for (std::size_t n = 0; n < s.state; ++n) {
            const std::size_t j = ch * s.state + n;
            gc[n] += gyv * cr[n];
            gcr[n] += gyv * ht[j];
            const T abar = std::exp(dt * ac[n]);
            const T hprev = hp ? hp[j] : T(0);
            const T ga = gc[n] * hprev;
            gdt += ga * abar * ac[n];
            gac[n] += ga * abar * dt;
            gdt += gc[n] * br[n] * xv;
            gbr[n] += gc[n] * dt * xv;
            gxv += gc[n] * dt * br[n];
            gc[n] *= abar;
          }
          gx[e] += gxv;
          gdelta[e] += gdt;
        }
      }
    }

    auto flush = [](Node<T>& node, const std::vector<T>& src) {
      if (!node.tracked()) return;
      auto& g = node.grad_buffer();
      for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
    };
    flush(*self.inputs[0], gx);
    flush(*self.inputs[1], gdelta);
    flush(*self.inputs[3], gB);
    flush(*self.inputs[4], gC);
    if (self.inputs[2]->tracked()) {
      auto& g = self.inputs[2]->grad_buffer();
      for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t j = 0; j < DN; ++j) g[j] += gA_batch[b * DN + j];
    }
    if (self.inputs[5]->tracked()) {
      auto& g = self.inputs[5]->grad_buffer();
      for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t ch = 0; ch < s.inner; ++ch) g[ch] += gD_batch[b * s.inner + ch];
    }
  });
}

template <std::floating_point T>
Var<T> ssm_sequence(const Var<T>& seq, const ParamScope<T>& p, ScanAlgorithm algorithm) {
  const Var<T> delta = softplus(linear(seq, p("dt_weight"), std::optional<Var<T>>(p("dt_bias"))));
  const Var<T> b = linear(seq, p("b_weight"), std::optional<Var<T>>{});
  const Var<T> c = linear(seq, p("c_weight"), std::optional<Var<T>>{});
  const Var<T> a = neg(exp(p("a_log")));
  return selective_scan(seq, delta, a, b, c, p("d"), algorithm);
}

#define RSDH_INSTANTIATE_SSM(T)                                                                                  \
  template struct SsmParams<T>;                                                                                  \
  template ScanInputs<T> project_tokens<T>(const Tensor<T>&, const SsmParams<T>&);                               \
  template Discretized<T> discretize<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> selective_scan_seq<T>(const ScanInputs<T>&, Tensor<T>*);                                    \
  template Tensor<T> selective_scan_par<T>(const ScanInputs<T>&, Tensor<T>*);                                    \
  template Var<T> selective_scan<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,   \
                                    const Var<T>&, ScanAlgorithm);                                               \
  template Var<T> ssm_sequence<T>(const Var<T>&, const ParamScope<T>&, ScanAlgorithm);

RSDH_INSTANTIATE_SSM(float)
RSDH_INSTANTIATE_SSM(double)

}  // namespace rsdh

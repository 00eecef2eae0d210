#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rsdh/parallel.hpp"
#include "test_util.hpp"

using namespace rsdh;
using rsdh::test::random_tensor;
using rsdh::test::weighted_sum;

namespace {

// Straight loops, no shared code with the library kernel.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t stride,
                          std::size_t pad, std::size_t groups) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), K = w.dim(2), cpg = Cin / groups, opg = Cout / groups;
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  Tensor<double> y({B, Cout, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t oc = 0; oc < Cout; ++oc)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = b[oc];
          const std::size_t g = oc / opg;
          for (std::size_t ic = 0; ic < cpg; ++ic)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += x[((n * Cin + g * cpg + ic) * H + iy) * W + ix] * w[((oc * cpg + ic) * K + ky) * K + kx];
              }
          y[((n * Cout + oc) * Ho + oy) * Wo + ox] = acc;
        }
  return y;
}

double op_grad_error(const std::function<Var<double>(const BoundParams<double>&)>& f, ParamSet<double> params) {
  return grad_check(f, params).max_rel_error;
}

}  // namespace

TEST_CASE("tensor construction validates shape and data") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[5] == 1.5f);
  CHECK_THROWS_AS(Tensor<float>({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  CHECK(Tensor<float>().numel() == 1);
  CHECK_THROWS(t.reshaped({4, 2}));
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK(Tensor<float>::scalar(3.0f).item() == 3.0f);
}

TEST_CASE("dimension errors name the axis") {
  try {
    require_shape("op", Shape{2, 3, 4}, Shape{2, 5, 4});
    FAIL("expected a DimensionError");
  } catch (const DimensionError& e) {
    CHECK(e.axis() == 1);
    CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
  }
}

TEST_CASE("conv2d spec examples") {
  SUBCASE("1x1 identity kernel") {
    Tensor<float> x({1, 1, 3, 3}, 1.0f);
    const auto y = conv2d(Var<float>(x), Var<float>(Tensor<float>({1, 1, 1, 1}, 1.0f)), std::nullopt).value();
    CHECK(y.bit_equal(x));
  }
  SUBCASE("3x3 ones kernel, center sums all nine") {
    Tensor<float> x({1, 1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto y = conv2d(Var<float>(x), Var<float>(Tensor<float>({1, 1, 3, 3}, 1.0f)),
                          std::optional<Var<float>>(Tensor<float>({1}, 0.0f)), {1, 1, 1})
                       .value();
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y[4] == 45.0f);
    CHECK(y[0] == 12.0f);  // 1+2+4+5
  }
  SUBCASE("depth-wise channels are independent") {
    std::mt19937_64 rng(1);
    const auto x = random_tensor<float>({1, 3, 5, 5}, rng);
    const auto w = random_tensor<float>({3, 1, 3, 3}, rng);
    const auto y0 = conv2d(Var<float>(x), Var<float>(w), std::nullopt, {1, 1, 3}).value();
    auto x2 = x;
    for (std::size_t i = 0; i < 25; ++i) x2[25 + i] += 10.0f;  // perturb channel 1 only
    const auto y1 = conv2d(Var<float>(x2), Var<float>(w), std::nullopt, {1, 1, 3}).value();
    for (std::size_t i = 0; i < 25; ++i) {
      CHECK(y0[i] == y1[i]);
      CHECK(y0[50 + i] == y1[50 + i]);
    }
    CHECK(y0[25] != y1[25]);
  }
}

TEST_CASE("conv2d output size and shape errors") {
  std::mt19937_64 rng(2);
  const auto x = random_tensor<float>({2, 4, 7, 6}, rng);
  const auto y = conv2d(Var<float>(x), Var<float>(random_tensor<float>({8, 4, 3, 3}, rng)), std::nullopt, {2, 1, 1}).value();
  CHECK(y.shape() == Shape{2, 8, 4, 3});
  try {
    conv2d(Var<float>(x), Var<float>(random_tensor<float>({6, 4, 3, 3}, rng)), std::nullopt, {1, 1, 4});
    FAIL("groups mismatch accepted");
  } catch (const DimensionError& e) {
    CHECK(e.axis() >= 0);
  }
  CHECK_THROWS_AS(conv2d(Var<float>(x), Var<float>(random_tensor<float>({8, 3, 3, 3}, rng)), std::nullopt), DimensionError);
  CHECK_THROWS_AS(conv2d(Var<float>(x), Var<float>(random_tensor<float>({8, 4, 3, 3}, rng)),
                         std::optional<Var<float>>(Tensor<float>({7})), {1, 1, 1}),
                  DimensionError);
}

TEST_CASE("conv2d matches a naive loop oracle") {
  std::mt19937_64 rng(3);
  struct Case {
    std::size_t b, cin, cout, h, w, k, stride, pad, groups;
  };
  for (const Case& c : {Case{1, 3, 4, 5, 5, 3, 1, 1, 1}, Case{2, 4, 6, 7, 4, 3, 2, 1, 2}, Case{1, 4, 4, 6, 6, 3, 1, 1, 4},
                       Case{2, 2, 3, 4, 5, 1, 1, 0, 1}, Case{1, 2, 2, 9, 9, 5, 2, 2, 1}, Case{1, 1, 1, 2, 3, 3, 1, 1, 1}}) {
    const auto x = random_tensor<double>({c.b, c.cin, c.h, c.w}, rng);
    const auto w = random_tensor<double>({c.cout, c.cin / c.groups, c.k, c.k}, rng);
    const auto b = random_tensor<double>({c.cout}, rng);
    const auto y = conv2d(Var<double>(x), Var<double>(w), std::optional<Var<double>>(b), {c.stride, c.pad, c.groups}).value();
    const auto ref = naive_conv(x, w, b, c.stride, c.pad, c.groups);
    REQUIRE(y.shape() == ref.shape());
    CHECK(max_abs_diff(y, ref) < 1e-12);
  }
}

TEST_CASE("conv2d is linear in its input") {
  std::mt19937_64 rng(4);
  const auto x = random_tensor<float>({1, 3, 6, 6}, rng), z = random_tensor<float>({1, 3, 6, 6}, rng);
  const Var<float> w(random_tensor<float>({5, 3, 3, 3}, rng));
  const float a = 0.7f, b = -1.3f;
  Tensor<float> mix(x.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * z[i];
  const auto lhs = conv2d(Var<float>(mix), w, std::nullopt, {1, 1, 1}).value();
  const auto yx = conv2d(Var<float>(x), w, std::nullopt, {1, 1, 1}).value();
  const auto yz = conv2d(Var<float>(z), w, std::nullopt, {1, 1, 1}).value();
  double worst = 0.0;
  for (std::size_t i = 0; i < lhs.numel(); ++i) worst = std::max(worst, std::abs(double(lhs[i]) - (a * yx[i] + b * yz[i])));
  CHECK(worst < 1e-5);
}

TEST_CASE("layer_norm spec examples") {
  const Var<double> ones(Tensor<double>({2}, 1.0)), zeros(Tensor<double>({2}, 0.0));
  SUBCASE("constant input normalizes to zero") {
    const auto y = layer_norm(Var<double>(Tensor<double>({3, 2}, 4.0)), ones, zeros, 1e-5, 1).value();
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("[1,3] -> [-1,1]") {
    const auto y = layer_norm(Var<double>(Tensor<double>({1, 2}, {1.0, 3.0})), ones, zeros, 1e-12, 1).value();
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("gamma 0 collapses to beta") {
    std::mt19937_64 rng(5);
    const auto y = layer_norm(Var<double>(random_tensor<double>({4, 2}, rng)), Var<double>(Tensor<double>({2}, 0.0)),
                              Var<double>(Tensor<double>({2}, 0.25)), 1e-5, 1)
                       .value();
    for (double v : y.data()) CHECK(v == 0.25);
  }
  SUBCASE("channel count mismatch") {
    CHECK_THROWS_AS(layer_norm(Var<double>(Tensor<double>({1, 3})), ones, zeros, 1e-5, 1), DimensionError);
  }
}

TEST_CASE("layer_norm over the channel axis of a map is shift invariant per position") {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<float>({2, 5, 3, 4}, rng);
  auto shifted = x;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 12; ++p) {
      const float s = static_cast<float>(b * 12 + p) * 0.37f - 3.0f;
      for (std::size_t c = 0; c < 5; ++c) shifted[(b * 5 + c) * 12 + p] += s;
    }
  const Var<float> g(Tensor<float>({5}, 1.0f)), z(Tensor<float>({5}, 0.0f));
  const auto y0 = layer_norm(Var<float>(x), g, z, 1e-5f, 1).value();
  const auto y1 = layer_norm(Var<float>(shifted), g, z, 1e-5f, 1).value();
  CHECK(max_abs_diff(y0, y1) < 1e-5);
}

TEST_CASE("silu values") {
  const auto y = silu(Var<double>(Tensor<double>({3}, {0.0, 1.0, 60.0}))).value();
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(y[2] == doctest::Approx(60.0).epsilon(1e-12));
}

TEST_CASE("backward: sum of squares") {
  Tape<double> tape;
  const auto w = tape.leaf(Tensor<double>({2}, {1.0, 2.0}), "w");
  const auto g = backward(tape, sum(mul(w, w)));
  CHECK(g.at(w)[0] == 2.0);
  CHECK(g.at(w)[1] == 4.0);
  CHECK(g.by_name("w")[1] == 4.0);
}

TEST_CASE("backward: unused leaf gets an exact zero gradient; constants are absent") {
  Tape<double> tape;
  const auto w = tape.leaf(Tensor<double>({3}, 2.0), "w");
  const auto p = tape.leaf(Tensor<double>({2}, 5.0), "p");
  const Var<double> c(Tensor<double>({3}, 1.0));
  const auto g = backward(tape, sum(mul(w, c)));
  for (double v : g.at(p).data()) CHECK(v == 0.0);
  CHECK_FALSE(g.contains(c));
  CHECK_FALSE(c.tracked());
}

TEST_CASE("backward errors") {
  Tape<double> empty;
  CHECK_THROWS(backward(empty, Var<double>(Tensor<double>::scalar(1.0))));
  Tape<double> tape;
  const auto w = tape.leaf(Tensor<double>({2}, 1.0), "w");
  CHECK_THROWS(backward(tape, scale(w, 2.0)));
}

TEST_CASE("tape records in topological order") {
  Tape<double> tape;
  std::mt19937_64 rng(7);
  const auto x = tape.leaf(random_tensor<double>({1, 2, 4, 4}, rng), "x");
  const auto w = tape.leaf(random_tensor<double>({2, 2, 3, 3}, rng), "w");
  const auto y = silu(conv2d(x, w, std::nullopt, {1, 1, 1}));
  const auto loss = mean(mul(y, exp(y)));
  (void)loss;
  for (const auto& node : tape.nodes())
    for (const auto& in : node->inputs)
      if (in->tracked()) CHECK(in->seq < node->seq);
}

TEST_CASE("every primitive matches finite differences in 64-bit") {
  std::mt19937_64 rng(8);
  auto one = [&](const std::string& name, Shape shape, double lo = -1.0, double hi = 1.0) {
    ParamSet<double> ps;
    ps.add(name, random_tensor<double>(std::move(shape), rng, lo, hi));
    return ps;
  };
  SUBCASE("conv2d") {
    ParamSet<double> ps;
    ps.add("x", random_tensor<double>({2, 4, 5, 5}, rng));
    ps.add("w", random_tensor<double>({6, 2, 3, 3}, rng));
    ps.add("b", random_tensor<double>({6}, rng));
    const auto f = [](const BoundParams<double>& p) {
      return weighted_sum(conv2d(p("x"), p("w"), std::optional<Var<double>>(p("b")), {2, 1, 2}), 1);
    };
    CHECK(op_grad_error(f, ps) < 1e-4);
  }
  SUBCASE("linear") {
    ParamSet<double> ps;
    ps.add("x", random_tensor<double>({2, 3, 4}, rng));
    ps.add("w", random_tensor<double>({5, 4}, rng));
    ps.add("b", random_tensor<double>({5}, rng));
    const auto f = [](const BoundParams<double>& p) { return weighted_sum(linear(p("x"), p("w"), std::optional<Var<double>>(p("b"))), 2); };
    CHECK(op_grad_error(f, ps) < 1e-4);
  }
  SUBCASE("layer_norm") {
    ParamSet<double> ps;
    ps.add("x", random_tensor<double>({2, 4, 3, 2}, rng));
    ps.add("g", random_tensor<double>({4}, rng));
    ps.add("b", random_tensor<double>({4}, rng));
    const auto f = [](const BoundParams<double>& p) { return weighted_sum(layer_norm(p("x"), p("g"), p("b"), 1e-5, 1), 3); };
    CHECK(op_grad_error(f, ps) < 1e-4);
  }
  SUBCASE("elementwise binary") {
    ParamSet<double> ps;
    ps.add("a", random_tensor<double>({3, 4}, rng));
    ps.add("b", random_tensor<double>({3, 4}, rng));
    const auto f = [](const BoundParams<double>& p) {
      return weighted_sum(add(mul(p("a"), p("b")), sub(scale(p("a"), 0.5), neg(p("b")))), 4);
    };
    CHECK(op_grad_error(f, ps) < 1e-4);
  }
  SUBCASE("exp, silu, softplus") {
    const auto f = [](const BoundParams<double>& p) { return weighted_sum(add(exp(p("x")), add(silu(p("x")), softplus(p("x")))), 5); };
    CHECK(op_grad_error(f, one("x", {4, 5}, -3.0, 3.0)) < 1e-4);
  }
  SUBCASE("sum and mean") {
    const auto f = [](const BoundParams<double>& p) { return add(sum(mul(p("x"), p("x"))), mean(exp(p("x")))); };
    CHECK(op_grad_error(f, one("x", {2, 3, 2})) < 1e-4);
  }
  SUBCASE("l1 loss away from ties") {
    ParamSet<double> ps = one("x", {2, 6});
    Tensor<double> target(Shape{2, 6});
    for (std::size_t i = 0; i < 12; ++i) target[i] = ps.at("x")[i] + (i % 2 ? 0.5 : -0.5);
    const auto f = [&](const BoundParams<double>& p) { return l1_loss(p("x"), Var<double>(target)); };
    CHECK(op_grad_error(f, ps) < 1e-4);
  }
  SUBCASE("concat, upsample, reshape") {
    ParamSet<double> ps;
    ps.add("a", random_tensor<double>({1, 2, 3, 2}, rng));
    ps.add("b", random_tensor<double>({1, 3, 3, 2}, rng));
    const auto f = [](const BoundParams<double>& p) {
      return weighted_sum(reshape(upsample_nearest2x(concat(p("a"), p("b"), 1)), {5, 24}), 6);
    };
    CHECK(op_grad_error(f, ps) < 1e-4);
  }
}

TEST_CASE("l1 gradient is sign(pred - gt) / N") {
  Tape<double> tape;
  const auto pred = tape.leaf(Tensor<double>({4}, {0.5, -1.0, 2.0, 0.0}), "pred");
  const Tensor<double> gt({4}, {0.0, 0.0, 3.0, -1.0});
  const auto g = backward(tape, l1_loss(pred, Var<double>(gt))).at(pred);
  CHECK(g[0] == 0.25);
  CHECK(g[1] == -0.25);
  CHECK(g[2] == -0.25);
  CHECK(g[3] == 0.25);
}

TEST_CASE("grad_check spec examples") {
  std::mt19937_64 rng(9);
  SUBCASE("linear function is checked to rounding") {
    ParamSet<double> ps;
    ps.add("w", random_tensor<double>({6}, rng));
    const Tensor<double> c = random_tensor<double>({6}, rng);
    const auto f = [&](const BoundParams<double>& p) { return sum(mul(p("w"), Var<double>(c))); };
    const auto r = grad_check(f, ps);
    CHECK(r.max_rel_error < 1e-9);
    CHECK(r.checked == 6);
  }
  SUBCASE("dead SiLU region has near-zero gradients both ways") {
    ParamSet<double> ps;
    ps.add("x", Tensor<double>({4}, -60.0));
    const auto f = [](const BoundParams<double>& p) { return sum(silu(p("x"))); };
    const auto r = grad_check(f, ps);
    CHECK(std::abs(r.worst_analytic) < 1e-20);
    CHECK(std::abs(r.worst_numeric) < 1e-20);
  }
  SUBCASE("non-finite values name the parameter") {
    ParamSet<double> ps;
    ps.add("blowup", Tensor<double>({2}, 800.0));
    const auto f = [](const BoundParams<double>& p) { return sum(exp(p("blowup"))); };
    try {
      grad_check(f, ps);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("blowup") != std::string::npos);
    }
  }
  SUBCASE("a wrong gradient is detected") {
    // scale() with a deliberately mismatched backward to prove the checker bites.
    ParamSet<double> ps;
    ps.add("x", Tensor<double>({3}, 1.0));
    const auto f = [](const BoundParams<double>& p) {
      const Var<double>& x = p("x");
      Var<double> y = record<double>(x.value(), {x}, [](Node<double>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * n.grad[i];
      });
      return sum(y);
    };
    CHECK(grad_check(f, ps).max_rel_error > 0.4);
    GradCheckOptions refine;
    refine.refine_above = 1e-3;
    CHECK(grad_check(f, ps, refine).max_rel_error > 0.4);
  }
  SUBCASE("fourth-order refinement removes the cubic truncation error") {
    ParamSet<double> ps;
    ps.add("x", Tensor<double>({1}, 1.0));
    const auto f = [](const BoundParams<double>& p) { return sum(mul(mul(p("x"), p("x")), p("x"))); };
    GradCheckOptions opt;
    opt.step = 0.1;
    // (1.1^3 - 0.9^3) / 0.2 = 3.01 against the exact 3
    const auto coarse = grad_check(f, ps, opt);
    CHECK(coarse.worst_numeric == doctest::Approx(3.01).epsilon(1e-12));
    CHECK(coarse.refined == 0);
    opt.refine_above = 1e-3;
    opt.refine_step = 0.1;
    const auto fine = grad_check(f, ps, opt);
    CHECK(fine.refined == 1);
    CHECK(fine.max_rel_error < 1e-12);
  }
}

TEST_CASE("forward kernels are bit-identical across runs and thread counts") {
  std::mt19937_64 rng(10);
  const auto x = random_tensor<float>({2, 8, 16, 16}, rng);
  const auto w = random_tensor<float>({8, 8, 3, 3}, rng);
  auto run = [&] {
    Tape<float> tape;
    const auto wx = tape.leaf(w, "w");
    const auto y = silu(conv2d(Var<float>(x), wx, std::nullopt, {1, 1, 1}));
    const auto g = backward(tape, mean(y));
    return std::make_pair(y.value(), g.at(wx));
  };
  const auto [y1, g1] = run();
  set_thread_cap(1);
  const auto [y2, g2] = run();
  set_thread_cap(0);
  const auto [y3, g3] = run();
  CHECK(y1.bit_equal(y2));
  CHECK(y1.bit_equal(y3));
  CHECK(g1.bit_equal(g2));
  CHECK(g1.bit_equal(g3));
}

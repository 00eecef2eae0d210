#include "rsdh/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace rsdh {

namespace {

template <std::floating_point T>
void check_pair(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(op, -1, "shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Separable valid-mode Gaussian filter of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t H, std::size_t W,
                                 const std::array<double, kWindow>& w) {
  const std::size_t Ho = H - kWindow + 1, Wo = W - kWindow + 1;
  std::vector<double> rows(H * Wo, 0.0), out(Ho * Wo, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += w[k] * plane[y * W + x + k];
      rows[y * Wo + x] = acc;
    }
  for (std::size_t y = 0; y < Ho; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += w[k] * rows[(y + k) * Wo + x];
      out[y * Wo + x] = acc;
    }
  return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t H, std::size_t W) {
  static const auto w = gaussian_window();
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, H, W, w), mu_b = filter_valid(b, H, W, w);
  const auto e_aa = filter_valid(aa, H, W, w), e_bb = filter_valid(bb, H, W, w), e_ab = filter_valid(ab, H, W, w);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

template <std::floating_point T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  check_pair("l1_loss", pred, gt);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
  return acc / static_cast<double>(pred.numel());
}

template <std::floating_point T>
double mse(const Tensor<T>& pred, const Tensor<T>& gt) {
  check_pair("mse", pred, gt);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

template <std::floating_point T>
double psnr(const Tensor<T>& pred, const Tensor<T>& gt, double max_val) {
  const double m = mse(pred, gt);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / m);
}

template <std::floating_point T>
double ssim(const Tensor<T>& pred, const Tensor<T>& gt) {
  check_pair("ssim", pred, gt);
  const Shape& s = pred.shape();
  if (s.size() != 3 && s.size() != 4) throw DimensionError("ssim", -1, "expected [C,H,W] or [B,C,H,W], got " + shape_to_string(s));
  const std::size_t H = s[s.size() - 2], W = s[s.size() - 1];
  if (H < kWindow) throw DimensionError("ssim", static_cast<int>(s.size() - 2), "height " + std::to_string(H) + " smaller than the 11x11 window");
  if (W < kWindow) throw DimensionError("ssim", static_cast<int>(s.size() - 1), "width " + std::to_string(W) + " smaller than the 11x11 window");
  const std::size_t planes = pred.numel() / (H * W);
  double total = 0.0;
  std::vector<double> a(H * W), b(H * W);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < H * W; ++i) {
      a[i] = static_cast<double>(pred[p * H * W + i]);
      b[i] = static_cast<double>(gt[p * H * W + i]);
    }
    total += ssim_plane(a, b, H, W);
  }
  return total / static_cast<double>(planes);
}

template <std::floating_point T>
MetricReport evaluate_metrics(const Tensor<T>& pred, const Tensor<T>& gt) {
  return MetricReport{psnr(pred, gt), ssim(pred, gt), l1_loss(pred, gt)};
}

std::string format_report(const MetricReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "psnr_db=%.4f ssim=%.6f l1=%.6f", r.psnr_db, r.ssim, r.l1);
  return buf;
}

#define RSDH_INSTANTIATE_METRICS(T)                                          \
  template double l1_loss<T>(const Tensor<T>&, const Tensor<T>&);            \
  template double mse<T>(const Tensor<T>&, const Tensor<T>&);                \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double);       \
  template double ssim<T>(const Tensor<T>&, const Tensor<T>&);               \
  template MetricReport evaluate_metrics<T>(const Tensor<T>&, const Tensor<T>&);

RSDH_INSTANTIATE_METRICS(float)
RSDH_INSTANTIATE_METRICS(double)

}  // namespace rsdh

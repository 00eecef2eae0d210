#pragma once

#include <string>

#include "rsdh/tensor.hpp"

namespace rsdh {

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double l1 = 0.0;
};

/// Mean absolute difference over all elements.
template <std::floating_point T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& gt);

template <std::floating_point T>
double mse(const Tensor<T>& pred, const Tensor<T>& gt);

/// 10*log10(max_val^2 / MSE); +infinity when the images are identical.
template <std::floating_point T>
double psnr(const Tensor<T>& pred, const Tensor<T>& gt, double max_val = 1.0);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, valid windows only. Images are [C,H,W] or
/// [B,C,H,W]; the result is the mean over images and channels.
template <std::floating_point T>
double ssim(const Tensor<T>& pred, const Tensor<T>& gt);

template <std::floating_point T>
MetricReport evaluate_metrics(const Tensor<T>& pred, const Tensor<T>& gt);

/// "psnr_db=<v> ssim=<v> l1=<v>"
std::string format_report(const MetricReport& report);

}  // namespace rsdh

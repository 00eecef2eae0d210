#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "rsdh/params.hpp"

namespace rsdh {

struct GradCheckOptions {
  double step = 1e-4;     // central-difference step
  double floor = 1e-8;    // denominator floor of the relative error
  std::size_t max_per_tensor = 0;  // 0 = check every element
  std::uint64_t seed = 0;          // element sampling when max_per_tensor > 0
  /// Elements whose relative error exceeds this are re-estimated with the
  /// fourth-order stencil at refine_step; 0 disables refinement.
  double refine_above = 0.0;
  double refine_step = 1e-3;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t refined = 0;
};

using LossFn = std::function<Var<double>(const BoundParams<double>&)>;

/// Compares reverse-mode gradients of a scalar loss with central finite
/// differences and returns the largest
/// |g_ad - g_fd| / max(|g_ad|, |g_fd|, floor) over the checked elements.
/// Throws NumericError naming the parameter if a non-finite value appears.
GradCheckReport grad_check(const LossFn& loss, const ParamSet<double>& params, const GradCheckOptions& options = {});

}  // namespace rsdh

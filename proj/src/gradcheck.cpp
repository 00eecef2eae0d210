#include "rsdh/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rsdh {

namespace {

double evaluate(const LossFn& loss, const ParamSet<double>& params) {
  const auto bound = BoundParams<double>::constant(params);
  return loss(bound).value().item();
}

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const ParamSet<double>& params, const GradCheckOptions& options) {
  Tape<double> tape;
  const auto bound = BoundParams<double>::track(tape, params);
  const Var<double> out = loss(bound);
  const GradMap<double> grads = backward(tape, out);
  if (!std::isfinite(out.value().item())) {
    std::string culprits;
    for (const auto& [name, value] : params.entries()) {
      if (!all_finite(value) || !all_finite(grads.by_name(name))) culprits += (culprits.empty() ? "'" : ", '") + name + "'";
    }
    throw NumericError("grad_check: loss is not finite at the base point" +
                       (culprits.empty() ? std::string() : "; non-finite gradient for parameter " + culprits));
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  ParamSet<double> probe = params;

  for (const auto& [name, value] : params.entries()) {
    const Tensor<double>& g = grads.by_name(name);
    Tensor<double>& slot = probe.at(name);
    for (std::size_t i : pick_indices(value.numel(), options.max_per_tensor, rng)) {
      const double orig = value[i];
      slot[i] = orig + options.step;
      const double up = evaluate(loss, probe);
      slot[i] = orig - options.step;
      const double down = evaluate(loss, probe);
      slot[i] = orig;

      double numeric = (up - down) / (2.0 * options.step);
      const double analytic = g[i];
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        throw NumericError("grad_check: non-finite gradient for parameter '" + name + "' element " + std::to_string(i));
      }
      auto rel_error = [&] { return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), options.floor}); };
      double rel = rel_error();
      if (options.refine_above > 0.0 && rel > options.refine_above) {
        const double h = options.refine_step;
        auto at = [&](double offset) {
          slot[i] = orig + offset;
          return evaluate(loss, probe);
        };
        const bool reuse = h == options.step;
        const double f2 = at(2 * h), f1 = reuse ? up : at(h), b1 = reuse ? down : at(-h), b2 = at(-2 * h);
        slot[i] = orig;
        numeric = (-f2 + 8.0 * f1 - 8.0 * b1 + b2) / (12.0 * h);
        if (!std::isfinite(numeric)) {
          throw NumericError("grad_check: non-finite gradient for parameter '" + name + "' element " + std::to_string(i));
        }
        rel = rel_error();
        ++report.refined;
      }
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_param = name;
          report.worst_index = i;
          report.worst_analytic = analytic;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace rsdh

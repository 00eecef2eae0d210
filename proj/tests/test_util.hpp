#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "rsdh/gradcheck.hpp"
#include "rsdh/ops.hpp"

namespace rsdh::test {

template <std::floating_point T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

/// sum(f(...) * R) for a fixed random R, so the upstream gradient is not uniform.
inline Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, Var<double>(random_tensor<double>(y.shape(), rng))));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("rsdh_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path fixture_path(const std::string& name) {
  return std::filesystem::path(RSDH_FIXTURE_DIR) / name;
}

inline bool writing_fixtures() {
  const char* env = std::getenv("RSDH_WRITE_FIXTURES");
  return env && std::string(env) == "1";
}

/// Parameter count of one block, written layer by layer from the architecture
/// description rather than by walking a declared parameter set.
inline std::size_t analytic_vdb_count(std::size_t c, std::size_t n, int dirs, bool dconv, bool ffn, std::size_t hidden) {
  const std::size_t conv3 = 9 * c * c + c, norm = 2 * c, point = c * c + c, dw = 9 * c + c;
  // a_log, d, dt_weight, dt_bias, b_weight, c_weight
  const std::size_t per_dir = c * n + c + c * c + c + 2 * n * c;
  std::size_t total = conv3 + norm + 2 * point + static_cast<std::size_t>(dirs) * per_dir + norm + point;
  if (dconv) total += dw;
  if (ffn) total += norm + dw + (hidden * c + hidden) + (c * hidden + c);
  return total;
}

/// Whole-network count for expansion ratio 2.
inline std::size_t analytic_model_count(std::size_t C, std::size_t n1, std::size_t n2, std::size_t n3, std::size_t n,
                                        int dirs, bool dconv, bool ffn) {
  auto block = [&](std::size_t c) { return analytic_vdb_count(c, n, dirs, dconv, ffn, 2 * c); };
  auto conv = [](std::size_t cout, std::size_t cin, std::size_t k) { return cout * cin * k * k + cout; };
  return conv(C, 3, 3) + n1 * block(C) + conv(2 * C, C, 3) + n2 * block(2 * C) + conv(4 * C, 2 * C, 3) +
         n3 * block(4 * C) + conv(2 * C, 4 * C, 3) + conv(2 * C, 4 * C, 1) + n2 * block(2 * C) + conv(C, 2 * C, 3) +
         n1 * block(2 * C) + conv(3, 2 * C, 3);
}

}  // namespace rsdh::test

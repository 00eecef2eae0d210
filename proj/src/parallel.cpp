#include "rsdh/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace rsdh {

namespace {
int default_threads() {
  static const int n = omp_get_num_procs();
  return n;
}
}  // namespace

void set_thread_cap(int threads) {
  omp_set_num_threads(threads > 0 ? threads : default_threads());
}

void configure_threads_from_env() {
  const char* env = std::getenv("RSDH_THREADS");
  int cap = 0;
  if (env && *env) {
    try {
      cap = std::stoi(env);
    } catch (const std::exception&) {
      cap = 0;
    }
  }
  set_thread_cap(cap < 0 ? 0 : cap);
}

int kernel_threads() { return omp_get_max_threads(); }

}  // namespace rsdh

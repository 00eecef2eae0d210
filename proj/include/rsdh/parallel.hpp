#pragma once

#include <cstddef>

namespace rsdh {

/// Applies the RSDH_THREADS cap (0 or unset = runtime default) to kernel
/// parallelism. Safe to call more than once.
void configure_threads_from_env();

/// Sets the kernel thread cap directly; 0 restores the runtime default.
void set_thread_cap(int threads);

int kernel_threads();

}  // namespace rsdh

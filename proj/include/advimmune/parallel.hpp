#pragma once

#include <omp.h>

#include <cstdint>
#include <exception>

namespace advimmune {

// Execution policy for the data-parallel kernels. kSerial is the reference path
// the parallel path is tested against.
enum class Exec { kSerial, kParallel };

// Runs fn(i) for i in [0, n). Nested calls inside an active parallel region run
// serially. The first exception thrown by any iteration is rethrown.
template <class Fn>
void parallel_for(std::int64_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::kSerial || n < 2 || omp_in_parallel()) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
#pragma omp critical(advimmune_parallel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace advimmune

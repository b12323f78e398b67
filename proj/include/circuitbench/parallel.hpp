#pragma once

#include <cstddef>
#include <exception>

namespace circuitbench {

/// Runs fn(i) for i in [0, n) across OpenMP threads. Each index must write
/// only its own output slot. An exception thrown by any task is rethrown on
/// the calling thread after the loop (OpenMP regions must not leak them).
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
  std::exception_ptr error;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(circuitbench_parallel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace circuitbench

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace pram {

/// Number of worker threads used by the numeric kernels.
///
/// Read once from the `PRAM_THREADS` environment variable; defaults to the
/// hardware concurrency. Kernels only split work along axes whose partial
/// results are written to disjoint memory, so the thread count never changes
/// a result bit.
inline std::size_t thread_count() {
  static const std::size_t count = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PRAM_THREADS")) {
      try {
        long v = std::stol(env);
        if (v > 0) return static_cast<std::size_t>(v);
      } catch (...) {
      }
    }
    return hw;
  }();
  return count;
}

/// Runs fn(i) for i in [0, n). Each index must write disjoint output.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::size_t i = 0; i < std::min(n, chunk); ++i) fn(i);
  for (auto& t : pool) t.join();
}

}  // namespace pram

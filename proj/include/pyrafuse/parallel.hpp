#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace pyrafuse {

/// Worker bound from PYRAFUSE_THREADS, falling back to the hardware count.
inline std::size_t worker_count() {
  static const std::size_t count = [] {
    if (const char* env = std::getenv("PYRAFUSE_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v >= 1) return static_cast<std::size_t>(v);
      } catch (...) {
      }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }();
  return count;
}

/// Runs fn(begin, end) over disjoint contiguous chunks of [0, n). Each index
/// is owned by exactly one chunk, so results do not depend on the worker count
/// as long as fn writes only to outputs owned by its indices.
template <class F>
void parallel_for(std::size_t n, std::size_t work_per_item, F&& fn) {
  constexpr std::size_t kMinWork = 1u << 18;
  std::size_t workers = std::min(worker_count(), n);
  if (workers > 1 && n * work_per_item < kMinWork * workers) {
    workers = std::max<std::size_t>(1, (n * work_per_item) / kMinWork);
  }
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace pyrafuse

#ifndef NETSPILL_PARALLEL_HPP
#define NETSPILL_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace netspill {

namespace detail {
inline std::atomic<int> &default_thread_count() {
  static std::atomic<int> n{0};
  return n;
}

// set on pool workers so nested loops run inline instead of oversubscribing
inline thread_local bool in_worker = false;
} // namespace detail

/// Process-wide worker cap; 0 means hardware concurrency.
inline void set_thread_count(int n) { detail::default_thread_count() = std::max(0, n); }

inline int thread_count() {
  const int n = detail::default_thread_count();
  if (n > 0)
    return n;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Runs body(i) for i in [0, n). Each index is processed exactly once; callers
/// write into per-index slots so the merged result never depends on
/// scheduling. The first exception (lowest index among those observed) is
/// rethrown after all workers join. Nested calls run serially.
template <typename Body> void parallel_for(std::size_t n, Body &&body) {
  const auto workers = detail::in_worker
                           ? std::size_t{1}
                           : std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::size_t first_error_index = n;
  auto work = [&] {
    const bool outer = detail::in_worker;
    detail::in_worker = true;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) {
        detail::in_worker = outer;
        return;
      }
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 0; w + 1 < workers; ++w)
    pool.emplace_back(work);
  work();
  for (auto &t : pool)
    t.join();
  if (first_error)
    std::rethrow_exception(first_error);
}

} // namespace netspill

#endif // NETSPILL_PARALLEL_HPP

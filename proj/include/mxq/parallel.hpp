// SPDX-License-Identifier: Apache-2.0
//
// Static-partition parallel loop. Work items must not share mutable state;
// every caller writes to disjoint outputs, so results never depend on the
// thread count.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mxq {

namespace detail {

inline std::size_t initial_thread_count() {
  if (const char* env = std::getenv("MXQ_NUM_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline bool& inside_worker() {
  thread_local bool flag = false;
  return flag;
}

inline std::atomic<std::size_t>& thread_count_slot() {
  static std::atomic<std::size_t> slot{initial_thread_count()};
  return slot;
}

}  // namespace detail

inline std::size_t num_threads() { return detail::thread_count_slot().load(); }
inline void set_num_threads(std::size_t n) { detail::thread_count_slot().store(std::max<std::size_t>(1, n)); }

/// Calls fn(i) for i in [0, n). The first exception thrown by any worker is
/// rethrown on the calling thread. Nested calls run serially.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = detail::inside_worker() ? 1 : std::min(num_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      pool.emplace_back([&, begin, end] {
        detail::inside_worker() = true;
        try {
          for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mxq

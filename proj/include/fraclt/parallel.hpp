#pragma once

// Minimal deterministic task parallelism. Results are always written to a
// slot indexed by task, and reductions run in a fixed order, so outputs do not
// depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace fraclt {

namespace detail {
inline std::atomic<int>& default_threads_slot() {
  static std::atomic<int> slot{0};
  return slot;
}
}  // namespace detail

/// Worker count: explicit setting, then FRACLT_THREADS, then hardware.
inline int thread_count() {
  if (int n = detail::default_threads_slot().load(); n > 0) return n;
  if (const char* env = std::getenv("FRACLT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline void set_thread_count(int n) { detail::default_threads_slot().store(std::max(0, n)); }

namespace detail {
inline bool& inside_worker() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

/// Runs fn(i) for i in [0, n) on up to thread_count() workers. Nested calls
/// from inside a worker run serially.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1 || detail::inside_worker()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      detail::inside_worker() = true;
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Maps fn over [0, n), returning results in index order.
template <class Fn>
auto parallel_map(std::size_t n, Fn&& fn) {
  using T = decltype(fn(std::size_t{0}));
  std::vector<std::optional<T>> slots(n);
  parallel_for(n, [&](std::size_t i) { slots[i].emplace(fn(i)); });
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Pairwise (tree) summation in a fixed order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.empty()) return 0.0;
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace fraclt

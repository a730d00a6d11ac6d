#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fieldmol {

/// Global worker cap, set once by the CLI --threads flag. 0 = hardware count.
inline std::atomic<int>& max_threads_setting() {
  static std::atomic<int> value{0};
  return value;
}

inline void set_max_threads(int n) { max_threads_setting().store(n); }

inline int worker_count() {
  int cap = max_threads_setting().load();
  if (cap <= 0) cap = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, cap);
}

/// Runs f(i) for i in [begin, end). Work items must be independent; callers
/// that reduce must do so afterwards in index order so results do not depend
/// on the thread count.
template <typename F>
void parallel_for(int begin, int end, F&& f) {
  const int n = end - begin;
  if (n <= 0) return;
  const int workers = std::min(worker_count(), n);
  if (workers == 1) {
    for (int i = begin; i < end; ++i) f(i);
    return;
  }
  std::atomic<int> next{begin};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= end) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers) - 1);
  for (int t = 1; t < workers; ++t) threads.emplace_back(body);
  body();
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace fieldmol

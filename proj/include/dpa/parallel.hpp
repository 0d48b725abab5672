#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "dpa/common.hpp"

namespace dpa {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

// Runs fn(chunk_index) for chunk_index in [0, n_chunks). Work items are fixed
// by chunk index, never by thread id, so any reduction keyed on chunk index is
// deterministic regardless of scheduling or thread count.
template <typename Fn>
void parallel_for_chunks(Index n_chunks, int threads, Fn&& fn) {
  threads = std::min<Index>(resolve_threads(threads), std::max<Index>(n_chunks, 1));
  if (threads <= 1 || n_chunks <= 1) {
    for (Index c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const Index c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        fn(c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Serializes reduction commits into chunk-index order: chunk i's commit runs
// strictly after chunk i-1's, whatever thread computed it. Summing partials
// through this gives bitwise-identical totals for any thread count.
class OrderedCommitter {
 public:
  template <typename Fn>
  void commit(Index chunk_index, Fn&& fn) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return aborted_ || next_ == chunk_index; });
    if (aborted_) return;  // an exception is unwinding; drop this partial
    fn();
    ++next_;
    cv_.notify_all();
  }

  // Wakes all waiters after a chunk failed, so the error can propagate
  // instead of deadlocking the remaining committers.
  void abort() {
    std::lock_guard<std::mutex> lock(mu_);
    aborted_ = true;
    cv_.notify_all();
  }

  void reset() {
    std::lock_guard<std::mutex> lock(mu_);
    next_ = 0;
    aborted_ = false;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  Index next_ = 0;
  bool aborted_ = false;
};

// Splits [0, n) into chunks of at most chunk_size and runs fn(begin, end, chunk_index).
template <typename Fn>
void parallel_for_ranges(Index n, Index chunk_size, int threads, Fn&& fn) {
  if (n <= 0) return;
  chunk_size = std::max<Index>(chunk_size, 1);
  const Index n_chunks = (n + chunk_size - 1) / chunk_size;
  parallel_for_chunks(n_chunks, threads, [&](Index c) {
    const Index begin = c * chunk_size;
    const Index end = std::min(begin + chunk_size, n);
    fn(begin, end, c);
  });
}

}  // namespace dpa

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mfglq {

// Worker-count hint shared by all compute loops. 0 = hardware concurrency.
inline int& worker_count_slot() {
  static int n = 0;
  return n;
}
inline void set_worker_count(int n) { worker_count_slot() = n; }
inline int effective_workers() {
  int n = worker_count_slot();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}

// Work is split into a fixed number of chunks independent of the worker
// count. Per-chunk accumulators combined in chunk order give bit-identical
// results at any parallelism level.
inline constexpr std::size_t kFixedChunks = 64;

inline std::size_t chunk_count(std::size_t n_items) {
  return std::min<std::size_t>(n_items, kFixedChunks);
}

// fn(chunk, begin, end) over [0, n_items); chunk boundaries depend only on
// n_items.
template <typename Fn>
void parallel_chunks(std::size_t n_items, Fn&& fn) {
  const std::size_t n_chunks = chunk_count(n_items);
  if (n_chunks == 0) return;
  auto lo = [n_items, n_chunks](std::size_t c) { return c * n_items / n_chunks; };
  const int workers =
      std::min<int>(effective_workers(), static_cast<int>(n_chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) fn(c, lo(c), lo(c + 1));
    return;
  }
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = static_cast<std::size_t>(w); c < n_chunks;
             c += static_cast<std::size_t>(workers))
          fn(c, lo(c), lo(c + 1));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

template <typename Fn>
void parallel_for(std::size_t n_items, Fn&& fn) {
  parallel_chunks(n_items, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace mfglq

#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace sq {

// Static block partition over [begin, end). Work items must be independent;
// results are then identical for any thread count.
inline void parallel_for(int64_t begin, int64_t end, int threads,
                         const std::function<void(int64_t)>& fn) {
  int64_t count = end - begin;
  if (count <= 0) return;
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  int64_t workers = std::min<int64_t>(threads, count);

  if (workers == 1) {
    for (int64_t i = begin; i < end; ++i) fn(i);
    return;
  }

  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int64_t w = 0; w < workers; ++w) {
    int64_t lo = begin + count * w / workers;
    int64_t hi = begin + count * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace sq

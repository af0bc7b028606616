#pragma once

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace rsynth::parallel {

// Static chunking; each worker owns a disjoint index range, so results are
// identical for any thread count. The first worker exception is rethrown on
// the calling thread after the join.
inline void parallel_for(int begin, int end, int threads, const std::function<void(int, int)>& body) {
  int n = end - begin;
  if (threads <= 1 || n < 2 * threads) {
    body(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors;
  int chunk = (n + threads - 1) / threads;
  errors.resize(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    int lo = begin + t * chunk;
    int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, &errors, t, lo, hi] {
      try {
        body(lo, hi);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace rsynth::parallel

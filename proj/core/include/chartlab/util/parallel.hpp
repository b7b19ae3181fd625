#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace chartlab {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one worker and fn must only write state owned by i,
/// so results are independent of the schedule. Rethrows the first failure
/// (lowest index).
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t used = std::min(workers, n);
  for (std::size_t w = 0; w < used; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += used) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace chartlab

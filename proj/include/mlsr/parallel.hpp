#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <thread>
#include <vector>

namespace mlsr {

/// True when MLSR_DETERMINISTIC=1 is set in the environment.
inline bool deterministic_mode() {
  const char* v = std::getenv("MLSR_DETERMINISTIC");
  return v != nullptr && std::strcmp(v, "1") == 0;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is owned by
/// exactly one worker; callers reduce the per-index results in index order.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1 || deterministic_mode()) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mlsr
